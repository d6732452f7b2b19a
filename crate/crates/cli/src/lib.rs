//! Library surface of the command-line tool: command implementations that
//! the binary wraps with argument parsing and exit-code mapping.
