"""CPU-only curation pipeline turning web-archive dumps into filtered, deduplicated, domain-routed text corpora."""

__version__ = "0.1.0"
