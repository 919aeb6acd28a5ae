"""Desk-scale adversarial trainer that records certainty traces"""
