"""Spectral and score-distribution analyses"""
