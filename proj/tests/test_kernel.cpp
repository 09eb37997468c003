/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * This file is part of convleak.
 */

#include "convleak/kernel.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace convleak;

namespace {

std::vector<Kernel> parse(const std::string &text) {
    std::istringstream in(text);
    return parse_kernels(in, "mem");
}

} // namespace

TEST(KernelFile, ParsesBlocksWithComments) {
    const auto ks = parse("# two kernels\nK=3\n1 -1 1\n0 0 0\n-1 1 -1\nbias=4\n\n"
                          "K=5\n" + std::string(5, ' ') + "1 1 1 1 1\n1 1 1 1 1\n"
                          "1 1 1 1 1\n1 1 1 1 1\n1 1 1 1 1\nbias=-2\n");
    ASSERT_EQ(ks.size(), 2u);
    EXPECT_EQ(ks[0].size, 3);
    EXPECT_EQ(ks[0].weights, (std::vector<int>{1, -1, 1, 0, 0, 0, -1, 1, -1}));
    EXPECT_EQ(ks[0].bias, 4);
    EXPECT_EQ(ks[0].weight(2, 1), 1);
    EXPECT_EQ(ks[1].size, 5);
    EXPECT_EQ(ks[1].bias, -2);
}

TEST(KernelFile, FormatParseRoundTrip) {
    auto ks = random_binary_kernels(6, 3, 11);
    ks[2].bias = -7;
    EXPECT_EQ(parse(format_kernels(ks)), ks);
}

TEST(KernelFile, Errors) {
    EXPECT_THROW(parse("K=4\n"), FormatError);
    EXPECT_THROW(parse("K=3\n1 1\n1 1 1\n1 1 1\nbias=0\n"), FormatError);
    EXPECT_THROW(parse("K=3\n1 1 1\n1 1 1\n1 1 1\n"), FormatError);
    EXPECT_THROW(parse("K=3\n1 1 x\n1 1 1\n1 1 1\nbias=0\n"), FormatError);
    EXPECT_THROW(parse("weights\n"), FormatError);
}

TEST(RandomKernels, BinaryAndSeeded) {
    const auto a = random_binary_kernels(64, 3, 5);
    const auto b = random_binary_kernels(64, 3, 5);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, random_binary_kernels(64, 3, 6));
    for (const Kernel &k : a) {
        EXPECT_EQ(k.bias, 0);
        ASSERT_EQ(k.weights.size(), 9u);
        for (int w : k.weights)
            EXPECT_TRUE(w == 1 || w == -1);
    }
}

TEST(KernelValidate, RejectsBadShapes) {
    Kernel k;
    k.size = 4;
    k.weights.assign(16, 1);
    EXPECT_THROW(validate(k), ConfigError);
    k.size = 3;
    EXPECT_THROW(validate(k), ConfigError);
}
