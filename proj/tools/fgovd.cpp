// Placeholder entry point; subcommands land once the library is in place.
#include <cstdio>

int main() {
    std::puts("fgovd");
    return 0;
}
