"""Run commands: executor, subcommands and result files."""
