#pragma once
// Batch command-line front end. Subcommands: train, prune, search, inject,
// sweep, verify-expectation, inspect. Exit codes: 0 success (including
// --help), 2 usage error (bad flags, bad values, missing input files, invalid
// config), 1 runtime failure. Every run echoes its fully resolved config as a
// provenance block, and a JSON config file (--config, same schema as the
// echo) can predefine any flag; explicit flags win.
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rxsim/mapping.hpp"

namespace rxsim {

// "0.01,0.05" and "0.1:0.9:0.1" (inclusive endpoints) or a mix of both.
std::vector<double> parse_value_list(const std::string& text);
std::vector<MappingScheme> parse_scheme_list(const std::string& text);

// args[0] is the program name, as in main().
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Introspection for the flag/doc parity test.
std::vector<std::string> cli_subcommand_names();
std::string cli_help_text(const std::string& subcommand);
std::vector<std::string> cli_flag_names(const std::string& subcommand);

}  // namespace rxsim
