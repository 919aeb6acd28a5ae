"""Domain records and their file formats"""
