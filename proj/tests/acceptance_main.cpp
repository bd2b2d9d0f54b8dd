// Acceptance gate: runs every validation criterion at its pinned tolerance
// and prints one PASS/FAIL line per criterion.  Exit 0 only when all pass.

#include "latthresh/validate.hpp"

#include <iostream>

int main() {
    auto suite = latthresh::validate::run_suite(std::cout);
    return suite.all_pass ? 0 : 1;
}
