"""Per-sample importance scores from certainty traces"""
