"""
Wire protocol and party state machines.
"""
