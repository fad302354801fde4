"""Task metrics: accuracy, mean average precision, equal error rate."""
