"""Guest fixture sources (.asm), loaded via importlib.resources."""
