"""Joint polarity + subjectivity sentence classification at desk scale.

A from-scratch reverse-mode tensor core (mtss.autodiff) drives a per-task
BiLSTM / self-attention encoder pair fused through a neural tensor network,
trained jointly with Adam. The CLI (mtss.cli) exposes prepare / train / eval /
gradcheck / export-report.
"""

__version__ = "0.1.0"
