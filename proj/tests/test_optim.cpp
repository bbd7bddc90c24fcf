#include "doctest.h"

#include <cmath>
#include <limits>

#include "cil/errors.hpp"
#include "cil/nn.hpp"
#include "cil/optim.hpp"
#include "cil/rng.hpp"

using namespace cil;

namespace {

// 1x1 classifier-only model: two scalars (weight, bias) to step by hand
Model scalar_model(double w, double b) {
    Model model(1, {}, 1);
    model.add_task_classes(1, 2);
    model.classifier().weight.value.at(0, 0) = w;
    model.classifier().bias.value[0] = b;
    return model;
}

OptimizerConfig plain(double lr) {
    OptimizerConfig config;
    config.learning_rate = lr;
    config.momentum = 0.0;
    config.weight_decay = 0.0;
    config.clip_threshold = 1e9;
    return config;
}

} // namespace

TEST_CASE("zero learning rate leaves parameters untouched") {
    Model model = scalar_model(1.0, -0.5);
    model.classifier().weight.gradient.at(0, 0) = 123.0;
    model.classifier().bias.gradient[0] = -7.0;
    sgd_step(model, plain(0.0));
    CHECK(model.classifier().weight.value.at(0, 0) == 1.0);
    CHECK(model.classifier().bias.value[0] == -0.5);
}

TEST_CASE("single step without momentum or decay") {
    Model model = scalar_model(1.0, 0.0);
    model.classifier().weight.gradient.at(0, 0) = 0.5;
    sgd_step(model, plain(0.1));
    CHECK(model.classifier().weight.value.at(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("weight decay adds value times coefficient to the gradient") {
    Model model = scalar_model(1.0, 0.0);
    OptimizerConfig config = plain(0.1);
    config.weight_decay = 0.01;
    sgd_step(model, config); // gradient is zero, decay alone moves the weight
    CHECK(model.classifier().weight.value.at(0, 0) == doctest::Approx(0.999).epsilon(1e-15));
}

TEST_CASE("momentum accumulates across steps") {
    Model model = scalar_model(0.0, 0.0);
    OptimizerConfig config = plain(1.0);
    config.momentum = 0.5;
    model.classifier().weight.gradient.at(0, 0) = 1.0;
    sgd_step(model, config);
    CHECK(model.classifier().weight.value.at(0, 0) == doctest::Approx(-1.0));
    model.classifier().weight.gradient.at(0, 0) = 1.0;
    sgd_step(model, config); // m = 0.5 * 1 + 1 = 1.5
    CHECK(model.classifier().weight.value.at(0, 0) == doctest::Approx(-2.5));
}

TEST_CASE("global-norm clipping rescales the whole gradient") {
    Model model(2, {}, 1);
    model.add_task_classes(1, 2);
    model.classifier().weight.value.fill(0.0);
    model.classifier().bias.value.fill(0.0);
    model.classifier().weight.gradient.at(0, 0) = 3.0;
    model.classifier().weight.gradient.at(0, 1) = 4.0; // global norm 5
    OptimizerConfig config = plain(1.0);
    config.clip_threshold = 1.0;
    sgd_step(model, config);
    CHECK(model.classifier().weight.value.at(0, 0) == doctest::Approx(-0.6).epsilon(1e-15));
    CHECK(model.classifier().weight.value.at(0, 1) == doctest::Approx(-0.8).epsilon(1e-15));
}

TEST_CASE("frozen parameters are bit-identical after many steps") {
    Model model(3, {4}, 7);
    model.add_task_classes(2, 8);
    model.set_trainable(false, true);
    const std::vector<double> w = model.extractor_layers()[0].weight.value.values;
    const std::vector<double> b = model.extractor_layers()[0].bias.value.values;
    Rng rng(5);
    for (int step = 0; step < 100; ++step) {
        for (Parameter* p : model.parameters())
            for (double& g : p->gradient.values) g = rng.normal();
        sgd_step(model, plain(0.05));
    }
    CHECK(model.extractor_layers()[0].weight.value.values == w);
    CHECK(model.extractor_layers()[0].bias.value.values == b);
}

TEST_CASE("non-finite gradients abort the step without touching values") {
    Model model = scalar_model(1.0, 2.0);
    model.classifier().weight.gradient.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    model.classifier().bias.gradient[0] = 1.0;
    CHECK_THROWS_AS(sgd_step(model, plain(0.1)), NumericalError);
    CHECK(model.classifier().weight.value.at(0, 0) == 1.0);
    CHECK(model.classifier().bias.value[0] == 2.0);
    CHECK(model.classifier().bias.momentum[0] == 0.0);
}

TEST_CASE("improving losses never reduce the rate") {
    Model model = scalar_model(0.0, 0.0);
    SchedulerConfig config;
    PatienceScheduler scheduler(0.1, config);
    for (int epoch = 0; epoch < 40; ++epoch) {
        const auto decision = scheduler.observe(1.0 - 0.01 * epoch, model);
        CHECK(decision == SchedulerDecision::Continue);
        CHECK(scheduler.lr() == 0.1);
    }
}

TEST_CASE("constant loss reduces the rate on the eleventh epoch") {
    Model model = scalar_model(0.0, 0.0);
    SchedulerConfig config; // patience 10, factor 3
    PatienceScheduler scheduler(0.1, config);
    CHECK(scheduler.observe(1.0, model) == SchedulerDecision::Continue); // improvement over nothing
    for (int epoch = 2; epoch <= 10; ++epoch)
        CHECK(scheduler.observe(1.0, model) == SchedulerDecision::Continue);
    CHECK(scheduler.observe(1.0, model) == SchedulerDecision::ReducedLr);
    CHECK(scheduler.lr() == doctest::Approx(0.1 / 3.0));
}

TEST_CASE("rate below the floor stops and restores the best snapshot") {
    Model model = scalar_model(4.0, 4.0);
    SchedulerConfig config; // min_lr 1e-4, factor 3
    PatienceScheduler scheduler(1.2e-4, config);
    CHECK(scheduler.observe(0.5, model) == SchedulerDecision::Continue); // snapshot at w=4
    model.classifier().weight.value.at(0, 0) = -100.0;                   // drift afterwards
    SchedulerDecision decision = SchedulerDecision::Continue;
    for (int epoch = 0; epoch < 10; ++epoch) decision = scheduler.observe(0.6, model);
    CHECK(decision == SchedulerDecision::Stop); // 1.2e-4 / 3 < 1e-4
    CHECK(model.classifier().weight.value.at(0, 0) == 4.0);
}

TEST_CASE("restore_best recovers the lowest-loss parameters") {
    Model model = scalar_model(1.0, 0.0);
    PatienceScheduler scheduler(0.1, SchedulerConfig{});
    scheduler.observe(0.9, model);
    model.classifier().weight.value.at(0, 0) = 2.0;
    scheduler.observe(0.3, model); // best is w=2
    model.classifier().weight.value.at(0, 0) = 3.0;
    scheduler.observe(0.8, model); // worse, no snapshot
    scheduler.restore_best(model);
    CHECK(model.classifier().weight.value.at(0, 0) == 2.0);
    CHECK(scheduler.best_val_loss() == 0.3);
}

TEST_CASE("scheduler rejects bad settings") {
    CHECK_THROWS_AS(PatienceScheduler(0.1, SchedulerConfig{0, 3.0, 1e-4}), ConfigError);
    CHECK_THROWS_AS(PatienceScheduler(0.1, SchedulerConfig{10, 1.0, 1e-4}), ConfigError);
    CHECK_THROWS_AS(PatienceScheduler(0.1, SchedulerConfig{10, 3.0, 0.0}), ConfigError);
}
