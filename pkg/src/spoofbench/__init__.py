"""spoofbench: a desk-scale workbench for synthetic-speech spoofing detection.

Feature extraction (cepstral, phase and envelope front-ends), GMM and
i-vector back-ends, SNR-controlled noise mixing, classical enhancement,
score fusion and ROCCH-EER evaluation, glued together by a CLI harness.
"""

__version__ = "0.1.0"
