"""Paper examples, Table-1 sweep, property suites and the command line."""
