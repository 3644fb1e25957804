#include <cstdio>

int main() {
    std::puts("dpinn: placeholder");
    return 0;
}
