"""Prompt text shared between response generation and the mock backend.

Kept in one place so the deterministic mock can recognize which kind of
call it is serving by comparing system prompts, without importing the
response modules (which import the gateway).
"""

DIRECT_SYSTEM = (
    "You are a helpful assistant. Answer the question using only the "
    "prepared knowledge below. Cite nothing else; if the knowledge is "
    "partial, say what is known."
)

TRANSITION_SYSTEM = (
    "You are a helpful assistant. You do not yet have the knowledge to "
    "answer. Acknowledge the question, restate the intent you understood, "
    "and keep the conversation going. Do not fabricate facts."
)

REASON_SYSTEM = (
    "You consolidate retrieved evidence. Think step by step, extract the "
    "salient facts, note contradictions, and keep provenance."
)

APOLOGY_TEXT = "Sorry, I hit a problem answering that. Could you try again?"
