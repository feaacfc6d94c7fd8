from __future__ import annotations

import pytest

from multinovelty.errors import ProviderError
from multinovelty.provider import ChatReply

TEN_PROMPTS = [
    "What does it mean to live a good life?",
    "How might settlements on the ocean floor sustain themselves?",
    "Describe a festival in a city where rivers run through every street.",
    "What are reliable ways to build a daily writing habit?",
    "How would you explain color to someone who has never seen?",
    "How could machine reasoning change laboratory work over the next decade?",
    "Should fast progress ever outweigh careful stewardship of wild places?",
    "How can small towns keep local shops alive as online retail grows?",
    "If plants could signal their needs directly, how would farming change?",
    "What habits help someone become a fair and steady team captain?",
]


class ScriptedProvider:
    """Test double that replays queued chat replies and records requests."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        self.name = "scripted"
        self.max_parallel = 1

    def fingerprint(self):
        return {"name": self.name}

    def chat(self, request):
        self.requests.append(request)
        if not self.replies:
            raise AssertionError("scripted provider ran out of replies")
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return ChatReply(text=reply, token_usage={}, model="scripted", latency_ms=0.0)


class FailingAfterProvider:
    """Chat provider that raises ProviderError after `n_ok` successful calls;
    until then it answers score requests with a number and everything else
    with `reply`."""

    def __init__(self, n_ok, reply="novel"):
        self.n_ok = n_ok
        self.reply = reply
        self.calls = 0
        self.name = "failing"
        self.max_parallel = 1

    def chat(self, request):
        self.calls += 1
        if self.calls > self.n_ok:
            raise ProviderError("scripted outage", status=500, attempts=5)
        content = request.messages[-1]["content"]
        text = "7.0" if "score" in content.lower() else self.reply
        return ChatReply(text=text, token_usage={}, model="failing", latency_ms=0.0)


@pytest.fixture
def scripted():
    return ScriptedProvider


@pytest.fixture
def ten_prompts_file(tmp_path):
    path = tmp_path / "prompts.txt"
    path.write_text("\n".join(TEN_PROMPTS) + "\n", encoding="utf-8")
    return path
