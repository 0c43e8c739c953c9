"""Behavioral MFT suite generation for text classifiers.

Pipeline: corpus preparation -> sentence embeddings -> topic clustering ->
representative document selection -> LLM test-case generation -> label QC ->
suite assembly -> evaluation and reporting.
"""

__version__ = "0.1.0"
