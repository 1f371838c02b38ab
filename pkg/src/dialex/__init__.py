"""dialex: fine-grained entity extraction over task-oriented dialogues.

Domain managers make cheap per-type presence judgments; activated experts
extract span values, each with few-shot exemplars picked by a key-info
weighted retriever. Includes the evaluation harness for extraction and
retrieval quality, a CLI, and a FastAPI service.
"""

__version__ = "0.1.0"
