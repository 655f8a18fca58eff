"""Storage-bidding laboratory: train supply-function policies, extract
N-pair market bids, and benchmark them against simpler bid formats and a
perfect-foresight dispatch optimum."""

__version__ = "0.1.0"
