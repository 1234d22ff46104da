#pragma once

namespace blastoseg {

// Command-line entry point (train / predict / evaluate / synth /
// augment). Exit codes: 0 success, 2 config error, 3 data error,
// 4 checkpoint error, 1 anything else.
int cli_main(int argc, const char* const* argv);

} // namespace blastoseg
