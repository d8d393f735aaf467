"""
Shared helpers: exceptions, file output and run configuration
"""
