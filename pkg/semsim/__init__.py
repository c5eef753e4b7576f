"""Desk-scale summarization with a frozen semantic-similarity scorer"""

__version__ = '0.1.0'
