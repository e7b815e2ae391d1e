"""stagegate: emergency-stage triage for responder social-media posts.

Classifies short messages into four stages (preparedness, response,
post-emergency recovery, engagement) with a linear SVM, a CNN, and a
GRU recurrent network, all trained from scratch on top of a sparse
n-gram/POS/DESC feature stack and skip-gram word embeddings.
"""

__version__ = "0.1.0"

from stagegate.corpus import Dataset, Message, StageLabel, load_corpus, save_corpus, split, stats

__all__ = [
    "Dataset",
    "Message",
    "StageLabel",
    "load_corpus",
    "save_corpus",
    "split",
    "stats",
    "__version__",
]
