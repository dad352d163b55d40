"""Study runner: test cases, federate adapters, report generation, CLI."""
