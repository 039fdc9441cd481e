#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "lgap/tensor.hpp"

int main(int argc, char** argv) {
    lgap::memory::keep_freed_pages();
    return doctest::Context(argc, argv).run();
}
