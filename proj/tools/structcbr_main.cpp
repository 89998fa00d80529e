#include <cstdio>

int main() {
    std::puts("structcbr: placeholder");
    return 0;
}
