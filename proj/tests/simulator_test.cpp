#include <gtest/gtest.h>

#include "resched/simulator.hpp"
#include "support.hpp"

using namespace resched;
using namespace resched::sim;
using namespace testsupport;

namespace {

ScenarioConfig small_config(double rate = 0.0) {
    ScenarioConfig c;
    c.id = "small";
    c.lines = {"L1", "L2", "L3"};
    c.recipes = {recipe("R1", "F1", {{"L1", 30}, {"L2", 40}}), recipe("R2", "F2", {{"L2", 20}, {"L3", 25}})};
    c.changeovers.entries[{"F1", "F2"}] = 10;
    c.changeovers.entries[{"F2", "F1"}] = 15;
    c.orders = {order("o1", "R1"), order("o2", "R2"), order("o3", "R1", 20)};
    c.true_rates.default_rate = rate;
    c.rng_seed = 11;
    return c;
}

SimOptions quiet() {
    SimOptions o;
    o.hazards_enabled = false;
    o.sensors_enabled = false;
    return o;
}

template <class T>
std::vector<T> only(const std::vector<Event>& events) {
    std::vector<T> out;
    for (const auto& e : events)
        if (auto* p = std::get_if<T>(&e.payload)) out.push_back(*p);
    return out;
}

Simulator started(const ScenarioConfig& c, SimOptions o = quiet()) {
    auto init = Simulator::init(c, o);
    Simulator s = std::move(init.sim);
    s.commit_schedule(baseline_schedule(s.plant_state(), s.catalog()), "p0");
    return s;
}

}  // namespace

TEST(Simulator, InitEmitsOneOrderCreatedPerOrder) {
    auto init = Simulator::init(small_config(), quiet());
    ASSERT_EQ(init.events.size(), 3u);
    EventLog log;
    const auto seqs = log.append_batch(init.events);
    EXPECT_EQ(seqs, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_EQ(only<OrderCreated>(init.events).size(), 3u);
    EXPECT_EQ(init.sim.clock(), 0);
}

TEST(Simulator, UnknownRecipeIsRejected) {
    auto c = small_config();
    c.orders.push_back(order("o9", "R9"));
    EXPECT_THROW(Simulator::init(c), ValidationError);
}

TEST(Simulator, SteppingBackwardsIsAnError) {
    auto s = started(small_config());
    s.step(50);
    EXPECT_THROW(s.step(40), Error);
}

TEST(Simulator, NoScheduleMeansNoBatches) {
    auto init = Simulator::init(small_config(), quiet());
    EXPECT_TRUE(init.sim.step(480).empty());
    for (const auto& [_, fate] : init.sim.order_fates()) EXPECT_EQ(fate, OrderFate::Pending);
}

TEST(Simulator, CertainFailureRateFailsEveryBatch) {
    auto s = started(small_config(1.0));
    const auto batches = only<BatchCompleted>(s.step(480));
    ASSERT_EQ(batches.size(), 3u);
    for (const auto& b : batches) EXPECT_EQ(b.outcome, BatchOutcome::Failed);
    for (const auto& [_, fate] : s.order_fates()) EXPECT_EQ(fate, OrderFate::CompletedFailed);
}

TEST(Simulator, InjectedFailureIsCorroborated) {
    auto s = started(small_config());
    const auto events = s.inject_failure("L2", 120);
    const auto failures = only<DeviceFailure>(events);
    ASSERT_EQ(failures.size(), 1u);
    EXPECT_EQ(failures[0].line_id, "L2");
    EXPECT_TRUE(failures[0].injected);
    EXPECT_FALSE(failures[0].duplicate);
    const auto readings = only<SensorReading>(events);
    ASSERT_EQ(readings.size(), 2u);
    for (const auto& r : readings) {
        EXPECT_EQ(r.line_id, "L2");
        EXPECT_LT(r.value, 0.5);
    }
    for (const auto& e : events)
        if (!std::holds_alternative<BatchCompleted>(e.payload)) EXPECT_EQ(e.ts, 120);
    EXPECT_EQ(s.line_state("L2"), LineState::Failed);
    EXPECT_EQ(s.clock(), 120);

    const auto again = s.inject_failure("L2", 130);
    ASSERT_EQ(again.size(), 1u);
    EXPECT_TRUE(std::get<DeviceFailure>(again[0].payload).duplicate);

    try {
        s.inject_failure("L1", 100);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("cannot inject a failure in the past"), std::string::npos);
    }
    EXPECT_THROW(s.inject_failure("L7", 200), Error);
}

TEST(Simulator, FailureStrandsUnfinishedJobs) {
    auto c = small_config();
    c.orders = {order("o1", "R1"), order("o3", "R1")};
    c.recipes[0].durations = {{"L1", 30}};
    auto s = started(c);
    // Both jobs sit on L1: o1 over [0, 30), o3 over [30, 60).
    s.inject_failure("L1", 40);
    const auto fates = s.order_fates();
    EXPECT_EQ(fates.at("o1"), OrderFate::CompletedSuccess);
    EXPECT_EQ(fates.at("o3"), OrderFate::Stranded);
    EXPECT_TRUE(only<BatchCompleted>(s.step(480)).empty());
}

TEST(Simulator, CommitOnFreshStateReportsPlan) {
    auto init = Simulator::init(small_config(), quiet());
    Simulator s = std::move(init.sim);
    const auto plan = baseline_schedule(s.plant_state(), s.catalog());
    const Event e = s.commit_schedule(plan, "p1");
    const auto& exec = std::get<ScheduleExecuted>(e.payload);
    EXPECT_EQ(exec.proposal_id, "p1");
    EXPECT_EQ(exec.jobs.size(), plan.job_count());
    EXPECT_EQ(s.committed_schedule().job_count(), 3u);
}

TEST(Simulator, MidRunCommitKeepsInFlightJob) {
    auto s = started(small_config());
    const Schedule before = s.committed_schedule();
    const auto where = before.find("o1");
    ASSERT_TRUE(where);
    const Job running = before.lines.at(where->first)[where->second];
    s.step(running.processing_start + 1);
    const PlantState plant = s.plant_state();
    EXPECT_EQ(plant.line(where->first)->in_flight, "o1");
    EXPECT_EQ(std::count(plant.open_orders.begin(), plant.open_orders.end(), "o1"), 0);

    // A new plan that leaves the running job out is fine; it is retained.
    s.commit_schedule(baseline_schedule(plant, s.catalog()), "p2");
    const auto after = s.committed_schedule().find("o1");
    ASSERT_TRUE(after);
    EXPECT_EQ(s.committed_schedule().lines.at(after->first)[after->second], running);

    // Moving it is not.
    Schedule moved = baseline_schedule(plant, s.catalog());
    const std::string other = where->first == "L1" ? "L2" : "L1";
    moved.lines[other].insert(moved.lines[other].begin(), Job{"o1", 500, 500, 540});
    try {
        s.commit_schedule(moved, "p3");
        FAIL();
    } catch (const ValidationError& e) {
        ASSERT_FALSE(e.violations().empty());
        EXPECT_EQ(e.violations()[0].rule, "in-flight job altered");
    }
}

TEST(Simulator, CompletedOrdersMustBeAbsent) {
    auto s = started(small_config());
    s.step(480);
    Schedule again = s.committed_schedule();
    try {
        s.commit_schedule(again, "p2");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.violations()[0].rule, "order already completed");
    }
}

TEST(Simulator, BatchesFollowCommittedSegmentsWithoutNoise) {
    auto s = started(small_config());
    const Schedule plan = s.committed_schedule();
    const auto batches = only<BatchCompleted>(s.step(480));
    ASSERT_EQ(batches.size(), plan.job_count());
    for (const auto& b : batches) {
        const auto where = plan.find(b.order_id);
        ASSERT_TRUE(where);
        EXPECT_EQ(b.line_id, where->first);
        const Job& j = plan.lines.at(where->first)[where->second];
        EXPECT_EQ(b.start, j.processing_start);
        EXPECT_EQ(b.end, j.end);
        EXPECT_EQ(b.outcome, BatchOutcome::Success);
    }
}

TEST(Simulator, OutcomesAreKeyedByOrderLineAttempt) {
    auto c = small_config(0.5);
    c.true_rates.entries[{"R1", "L1", "F1"}] = 0.5;
    auto s = started(c);
    for (const auto& b : only<BatchCompleted>(s.step(480))) {
        const double p = c.true_rates.lookup(b.recipe_id, b.line_id, b.prev_family);
        const bool failed = outcome_draw(c.rng_seed, b.order_id, b.line_id, 0) < p;
        EXPECT_EQ(b.outcome == BatchOutcome::Failed, failed) << b.order_id;
    }
    // Draws are a pure function of the key.
    EXPECT_EQ(outcome_draw(3, "o1", "L1", 0), outcome_draw(3, "o1", "L1", 0));
    EXPECT_NE(outcome_draw(3, "o1", "L1", 0), outcome_draw(3, "o1", "L1", 1));
    EXPECT_NE(outcome_draw(3, "o1", "L1", 0), outcome_draw(3, "o1", "L2", 0));
    EXPECT_NE(outcome_draw(3, "o1", "L1", 0), outcome_draw(4, "o1", "L1", 0));
}

TEST(Simulator, FailureRateMatchesTrueRate) {
    std::vector<double> draws;
    for (int i = 0; i < 4000; ++i) draws.push_back(outcome_draw(5, "o" + std::to_string(i), "L1", 0));
    const double frac = static_cast<double>(std::count_if(draws.begin(), draws.end(), [](double d) { return d < 0.2; })) /
                        static_cast<double>(draws.size());
    EXPECT_NEAR(frac, 0.2, 0.03);
}

class SimulatorProperty : public ::testing::TestWithParam<int> {};

TEST_P(SimulatorProperty, IdenticalCommandsGiveIdenticalEvents) {
    const auto seed = static_cast<std::uint64_t>(GetParam());
    const auto sc = generate_scenario(3, 4, 12, seed);
    auto run = [&] {
        auto s = started(sc, SimOptions{});
        auto events = s.step(200);
        auto more = s.inject_failure(sc.lines[0], 250);
        events.insert(events.end(), more.begin(), more.end());
        more = s.step(480);
        events.insert(events.end(), more.begin(), more.end());
        return events;
    };
    EXPECT_EQ(run(), run());
}

TEST_P(SimulatorProperty, EveryOrderHasExactlyOneFate) {
    const auto seed = static_cast<std::uint64_t>(GetParam());
    const auto sc = generate_scenario(3, 5, 15, seed);
    std::mt19937_64 rng(seed);
    auto s = started(sc, SimOptions{});
    std::vector<Event> events;
    for (int k = 0; k < 3; ++k) {
        const Minutes t = s.clock() + static_cast<Minutes>(rng() % 100);
        auto part = s.inject_failure(sc.lines[rng() % sc.lines.size()], t);
        events.insert(events.end(), part.begin(), part.end());
    }
    auto rest = s.step(s.clock() + 480);
    events.insert(events.end(), rest.begin(), rest.end());

    const auto fates = s.order_fates();
    EXPECT_EQ(fates.size(), sc.orders.size());
    std::map<std::string, int> completions;
    for (const auto& b : only<BatchCompleted>(events)) ++completions[b.order_id];
    for (const auto& [id, fate] : fates) {
        const bool completed = fate == OrderFate::CompletedSuccess || fate == OrderFate::CompletedFailed;
        EXPECT_EQ(completions[id], completed ? 1 : 0) << id;
    }
    // Time never runs backwards in the emitted stream.
    for (std::size_t i = 1; i < events.size(); ++i) EXPECT_LE(events[i - 1].ts, events[i].ts);
}

INSTANTIATE_TEST_SUITE_P(Seeds, SimulatorProperty, ::testing::Range(1, 16));
