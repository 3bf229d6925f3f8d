#include "fgovd/ablation.hpp"
int main() { return 0; }
