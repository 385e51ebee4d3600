"""Regenerate src/routebench/data/prompt_pool.jsonl.

Builds the default 324-prompt pool: 3 strata x 4 routes x 27 prompts, with the
first 8 complex prompts of every route marked state-sensitive (32 total).
Texts are combinatorial so the file is reproducible without randomness.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "routebench" / "data" / "prompt_pool.jsonl"

PER_CELL = 27
STATE_PER_ROUTE = 8

SIMPLE = {
    "chat": (["Hi there,", "Good morning,", "Hey,", "Thanks a lot,", "Hello again,", "Yo,",
              "Nice to meet you,", "Cheers,", "Good evening,"],
             ["how are you today?", "what's new with you?", "tell me something fun."]),
    "task": (["Remind me to", "Schedule a call to", "Add a todo to"],
             ["pay the electricity bill", "book the dentist", "renew my passport",
              "water the plants", "send the invoice", "call the landlord",
              "order printer ink", "pick up the parcel", "back up my laptop"]),
    "dev": (["Fix the", "Why does my", "Debug the"],
            ["NullPointerException in UserService.java", "segfault in my C parser",
             "failing pytest in test_api.py", "CORS error from my Flask app",
             "React useEffect infinite loop", "memory leak in the Go worker",
             "SQL deadlock in the orders table", "TypeScript type error on build",
             "Docker build that cannot find requirements.txt"]),
    "doc": (["Where in the manual is", "Show me the documentation for",
             "Find the policy page about"],
            ["the VPN setup", "expense reimbursement", "the onboarding checklist",
             "the API rate limits", "parental leave", "the security baseline",
             "the release process", "travel booking rules", "the data retention policy"]),
}

COMPLEX = {
    "chat": (["Sorry, got interrupted -", "Before we continue,", "Quick aside:"],
             ["what were we chatting about a minute ago?",
              "I just wanted to say the joke you told earlier was great.",
              "can we keep chatting about weekend plans like before?",
              "I'm feeling a bit down, can we just talk for a while?",
              "do you remember my favourite band from earlier?",
              "tell me again how your day is going.",
              "let's pick up our small talk where we left off.",
              "what did I say my dog's name was?",
              "I lost my train of thought, what were we discussing?"]),
    "task": (["Going back to my earlier list,", "As I mentioned before,", "Resuming from before the interruption,"],
             ["move the dentist reminder to Friday.",
              "mark the second todo as done.",
              "also add milk to the shopping list we started.",
              "reschedule the call we set up to next week.",
              "cancel the reminder I created this morning.",
              "push all of yesterday's tasks by one day.",
              "set the same reminder again but for 9am.",
              "change the priority of the invoice task to high.",
              "add a follow-up to the meeting we planned."]),
    "dev": (["Continuing the bug from before,", "Back to the stack trace I pasted earlier,", "Picking up our debugging session,"],
            ["the fix you suggested still throws a KeyError.",
             "the unit test now fails on the second assertion.",
             "the race condition returns after the refactor.",
             "the migration you wrote breaks the foreign key.",
             "the patch compiles but the benchmark regressed.",
             "the retry loop we added never terminates.",
             "the regex you gave misses the trailing slash.",
             "the Dockerfile change broke the cache layer.",
             "the null check didn't stop the crash on startup."]),
    "doc": (["Regarding the handbook section we opened earlier,", "Following up on the policy we were reading,", "Back to that document,"],
            ["what does clause 4.2 say about remote work?",
             "which page covered the approval thresholds?",
             "summarize the part about contractor access.",
             "where does it define the retention period?",
             "what did the appendix say about escalation?",
             "find the table of holiday allowances again.",
             "which section mentions laptop encryption?",
             "quote the paragraph on incident reporting.",
             "what was the version number of that spec?"]),
}

EDGE = {
    "chat": (["lol", "hmm ok", "???", "k thx", ":)", "meh", "wow", "brb", "yep"],
             ["", " (no request really)", " just saying hi"]),
    "task": (["remind", "todo:", "TASK ->"],
             ["dentist tmrw 3pm", "bills!!", "passport??", "gym mon/wed/fri",
              "call mom sunday", "tax forms by 15th", "car service", "renew domain",
              "standup notes"]),
    "dev": (["err:", "help:", "stack trace ->"],
            ["TypeError: undefined is not a function", "exit code 137",
             "ModuleNotFoundError: No module named 'yaml'", "HTTP 502 from nginx upstream",
             "git merge conflict in main.py", "OOMKilled", "ssl handshake failed",
             "npm ERR! ERESOLVE", "ld: symbol not found"]),
    "doc": (["docs?", "manual pls:", "link to the doc on"],
            ["VPN", "expenses", "PTO", "SSO login", "coding style guide", "brand assets",
             "on-call rota", "procurement", "GDPR"]),
}


def _texts(spec: tuple[list[str], list[str]]) -> list[str]:
    heads, tails = spec
    out = []
    for head, tail in itertools.product(heads, tails):
        sep = "" if not tail or tail.startswith(" ") else " "
        out.append(f"{head}{sep}{tail}".strip())
    assert len(out) == PER_CELL, (heads[:1], len(out))
    return out


def build() -> list[dict]:
    rows = []
    for stratum, table in (("simple", SIMPLE), ("complex", COMPLEX), ("edge", EDGE)):
        for route in ("chat", "task", "dev", "doc"):
            for i, text in enumerate(_texts(table[route])):
                state = stratum == "complex" and i < STATE_PER_ROUTE
                rows.append({
                    "id": f"{stratum[0]}-{route}-{i:02d}",
                    "text": text,
                    "ground_truth_route": route,
                    "stratum": stratum,
                    "state_sensitive": state,
                    "expected_state_behavior": {"route": route, "memory": True} if state else None,
                })
    return rows


if __name__ == "__main__":
    rows = build()
    OUT.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))
    print(f"wrote {len(rows)} prompts to {OUT}")
