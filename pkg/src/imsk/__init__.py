"""imsk: a compact speech transcription toolkit.

Feature extraction, unigram subword tokenization, hybrid CTC/attention
recognition, joint beam-search decoding with LM shallow fusion, speech
activity segmentation and WER scoring, built on a small numpy autograd core.
"""

__version__ = "0.1.0"
