#include <cstdio>
int main() { std::puts("dtfnet: work in progress"); return 0; }
