"""Multi-agent operation: host assignment, URL exchange and runtime control."""
