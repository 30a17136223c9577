"""Tests package for toroid-cqed-sim."""
