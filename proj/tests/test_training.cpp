#include <gtest/gtest.h>
#include "fgovd/ablation.hpp"
#include "fgovd/io.hpp"
#include "fgovd/eval_oracle.hpp"
TEST(Placeholder, Compiles) { SUCCEED(); }
