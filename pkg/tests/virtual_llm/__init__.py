"""A virtual chat-completion endpoint, for testing the http model backend."""

from .const import CHAT_PATH, EMBEDDINGS_PATH
from .virtual_llm import VirtualLlm

__all__ = ["CHAT_PATH", "EMBEDDINGS_PATH", "VirtualLlm"]
