#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "efanet/ops.hpp"
#include "efanet/optim.hpp"

using namespace efanet;

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    std::vector<Tensor<double>> params{Tensor<double>({1, 2, 2, 2}, 0.3).set_requires_grad(true)};
    AdamState<double> state(AdamOptions{0.1});
    adam_step<double>(params, state);
    for (double v : params[0].data()) EXPECT_EQ(v, 0.3);
    EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMovesAgainstGradientSign) {
    std::vector<Tensor<double>> params{Tensor<double>::scalar(1.0).set_requires_grad(true)};
    params[0].grad()[0] = 1.0;
    AdamState<double> state(AdamOptions{0.1});
    adam_step<double>(params, state);
    EXPECT_LT(params[0].item(), 1.0);
    // bias correction makes the first step exactly lr * g / (|g| + eps)
    EXPECT_NEAR(params[0].item(), 1.0 - 0.1 / (1.0 + 1e-8), 1e-12);
    EXPECT_EQ(params[0].grad()[0], 0.0);
}

TEST(Adam, ConvergesOnQuadratic) {
    std::vector<Tensor<double>> params{Tensor<double>::scalar(0.0).set_requires_grad(true)};
    AdamState<double> state(AdamOptions{0.1});
    for (int i = 0; i < 100; ++i) {
        Tape<double> tape;
        auto d = add(tape, params[0], Tensor<double>::scalar(-3.0));
        auto loss = mul(tape, d, d);
        backward(loss, tape);
        adam_step<double>(params, state);
    }
    EXPECT_LT(std::abs(params[0].item() - 3.0), 0.5);
    EXPECT_EQ(state.step, 100);
}

TEST(Adam, RejectsMissingGradient) {
    std::vector<Tensor<double>> params{Tensor<double>::scalar(1.0)};
    AdamState<double> state;
    EXPECT_THROW(adam_step<double>(params, state), ShapeError);
}
