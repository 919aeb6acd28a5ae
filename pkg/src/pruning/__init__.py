"""Dataset manifests from score tables"""
