// Command line entry point. Subcommands land here as the library grows;
// for now this is a placeholder that reports usage.
#include <cstdio>

int main() {
    std::puts("ndmd: no subcommand given");
    return 2;
}
