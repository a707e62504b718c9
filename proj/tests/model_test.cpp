#include <gtest/gtest.h>

#include "resched/codec.hpp"
#include "resched/model.hpp"
#include "resched/optimizer.hpp"
#include "resched/scenario.hpp"
#include "support.hpp"

using namespace resched;
using namespace testsupport;

namespace {

Problem two_family_line() {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L1", 30}}))
        .add(recipe("B", "FB", {{"L1", 45}}))
        .changeover("FA", "FB", 10)
        .changeover("FB", "FA", 10)
        .add(line("L1"));
    return p;
}

bool has_rule(const std::vector<Violation>& vs, const std::string& rule) {
    return std::any_of(vs.begin(), vs.end(), [&](const Violation& v) { return v.rule == rule; });
}

}  // namespace

TEST(Validate, EmptyScheduleWithoutOrdersIsValid) {
    Problem p = empty_problem();
    p.add(line("L1"));
    Schedule s{0, 480, {}};
    EXPECT_TRUE(validate_schedule(s, p.plant, p.catalog).empty());
}

TEST(Validate, JobOnFailedLineIsOneViolation) {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L1", 30}})).add(order("o1", "A")).add(line("L1", LineState::Failed));
    Schedule s{0, 480, {{"L1", {Job{"o1", 0, 0, 30}}}}};
    const auto vs = validate_schedule(s, p.plant, p.catalog);
    ASSERT_EQ(vs.size(), 1u);
    EXPECT_EQ(vs[0].rule, "line not available");
    EXPECT_EQ(vs[0].line_id, "L1");
}

TEST(Validate, OverlappingSegmentsIsOneViolation) {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L1", 40}})).add(order("o1", "A")).add(order("o2", "A")).add(line("L1"));
    Schedule s{0, 480, {{"L1", {Job{"o1", 0, 0, 40}, Job{"o2", 30, 30, 70}}}}};
    const auto vs = validate_schedule(s, p.plant, p.catalog);
    ASSERT_EQ(vs.size(), 1u);
    EXPECT_EQ(vs[0].describe().rfind("overlap on L1", 0), 0u) << vs[0].describe();
}

TEST(Validate, UnknownReferencesAreViolationsNotCrashes) {
    Problem p = empty_problem();
    p.add(line("L1"));
    p.catalog.orders["ghost"] = order("ghost", "missing-recipe");
    Schedule s{0, 480, {{"L1", {Job{"nobody", 0, 0, 10}, Job{"ghost", 10, 10, 20}}}, {"L9", {}}}};
    const auto vs = validate_schedule(s, p.plant, p.catalog);
    EXPECT_EQ(std::count_if(vs.begin(), vs.end(), [](const Violation& v) { return v.rule == "unknown reference"; }), 3);
}

TEST(Validate, EachScheduleRuleIsNamed) {
    Problem p = two_family_line();
    p.add(order("o1", "A", 50)).add(order("o2", "B")).add(order("o3", "A"));
    p.add(line("L2"));

    Schedule before_release{0, 480, {{"L1", {Job{"o1", 0, 0, 30}, Job{"o2", 30, 40, 85}, Job{"o3", 85, 95, 125}}}}};
    EXPECT_TRUE(has_rule(validate_schedule(before_release, p.plant, p.catalog), "before release"));

    Schedule wrong_duration{0, 480, {{"L1", {Job{"o1", 50, 50, 81}, Job{"o2", 81, 91, 136}, Job{"o3", 136, 146, 176}}}}};
    EXPECT_TRUE(has_rule(validate_schedule(wrong_duration, p.plant, p.catalog), "duration mismatch"));

    Schedule wrong_changeover{0, 480, {{"L1", {Job{"o1", 50, 50, 80}, Job{"o2", 80, 80, 125}, Job{"o3", 125, 135, 165}}}}};
    EXPECT_TRUE(has_rule(validate_schedule(wrong_changeover, p.plant, p.catalog), "changeover mismatch"));

    Schedule incompatible{0, 480, {{"L2", {Job{"o1", 50, 50, 80}}}, {"L1", {Job{"o2", 0, 0, 45}, Job{"o3", 45, 55, 85}}}}};
    EXPECT_TRUE(has_rule(validate_schedule(incompatible, p.plant, p.catalog), "incompatible line"));

    Schedule missing{0, 480, {{"L1", {Job{"o2", 0, 0, 45}}}}};
    const auto vs = validate_schedule(missing, p.plant, p.catalog);
    EXPECT_EQ(std::count_if(vs.begin(), vs.end(), [](const Violation& v) { return v.rule == "missing order"; }), 2);

    Schedule duplicate{0, 480, {{"L1", {Job{"o2", 0, 0, 45}, Job{"o2", 45, 45, 90}}}}};
    EXPECT_TRUE(has_rule(validate_schedule(duplicate, p.plant, p.catalog), "duplicate order"));
}

TEST(Validate, ReadyAtOfLineIsRespected) {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L1", 30}})).add(order("o1", "A")).add(line("L1", LineState::Available, 20));
    Schedule s{0, 480, {{"L1", {Job{"o1", 0, 0, 30}}}}};
    EXPECT_TRUE(has_rule(validate_schedule(s, p.plant, p.catalog), "line busy"));
}

TEST(Metrics, SingleJobHandComputation) {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L1", 30}})).add(order("o1", "A", 0, 480)).add(line("L1"));
    Schedule s{0, 480, {{"L1", {Job{"o1", 0, 0, 30}}}}};
    const auto m = compute_metrics(s, {&p.catalog, &p.plant, {}, 1.0});
    EXPECT_EQ(m.per_line_usage.at("L1"), 30);
    EXPECT_EQ(m.total_usage, 30);
    EXPECT_DOUBLE_EQ(m.per_line_utilization.at("L1"), 30.0 / 480.0);
    EXPECT_DOUBLE_EQ(m.per_line_utilization.at("L1"), 0.0625);
    EXPECT_EQ(m.total_tardiness, 0);
}

TEST(Metrics, IdenticalUtilizationHasZeroSpread) {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L1", 30}, {"L2", 30}})).add(order("o1", "A")).add(order("o2", "A"));
    p.add(line("L1")).add(line("L2"));
    Schedule s{0, 480, {{"L1", {Job{"o1", 0, 0, 30}}}, {"L2", {Job{"o2", 0, 0, 30}}}}};
    EXPECT_EQ(compute_metrics(s, {&p.catalog, &p.plant, {}, 1.0}).utilization_stddev, 0.0);
}

TEST(Metrics, TardinessIsEndMinusDue) {
    Problem p = empty_problem(600);
    p.add(recipe("A", "FA", {{"L1", 500}})).add(order("o1", "A", 0, 480)).add(line("L1"));
    Schedule s{0, 600, {{"L1", {Job{"o1", 0, 0, 500}}}}};
    EXPECT_EQ(compute_metrics(s, {&p.catalog, &p.plant, {}, 1.0}).total_tardiness, 20);
}

TEST(Metrics, DegenerateShiftIsAnError) {
    Problem p = empty_problem();
    Schedule s{0, 0, {}};
    EXPECT_THROW(compute_metrics(s, {&p.catalog, &p.plant, {}, 1.0}), Error);
}

TEST(Metrics, ExpectedFailureCostUsesPreviousFamily) {
    Problem p = two_family_line();
    p.add(order("o1", "A")).add(order("o2", "B"));
    Schedule s{0, 480, {{"L1", {Job{"o1", 0, 0, 30}, Job{"o2", 30, 40, 85}}}}};
    RateFn rate = [](const std::string& r, const std::string&, const std::string& prev) {
        if (r == "B" && prev == "FA") return 0.4;
        return prev.empty() ? 0.1 : 0.0;
    };
    // 0.1 * 30 for the first job, 0.4 * 45 for the second.
    EXPECT_DOUBLE_EQ(compute_metrics(s, {&p.catalog, &p.plant, rate, 1.0}).expected_failure_cost, 3.0 + 18.0);
    EXPECT_DOUBLE_EQ(compute_metrics(s, {&p.catalog, &p.plant, rate, 2.0}).expected_failure_cost, 42.0);
}

TEST(Baseline, NoOpenOrdersGivesEmptySchedule) {
    Problem p = empty_problem();
    p.add(line("L1"));
    const Schedule s = baseline_schedule(p.plant, p.catalog);
    EXPECT_EQ(s.job_count(), 0u);
}

TEST(Baseline, IdenticalOrdersSpreadOverIdenticalLines) {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L1", 30}, {"L2", 30}})).add(order("o1", "A")).add(order("o2", "A"));
    p.add(line("L2")).add(line("L1"));
    const Schedule s = baseline_schedule(p.plant, p.catalog);
    ASSERT_EQ(s.lines.at("L1").size(), 1u);
    ASSERT_EQ(s.lines.at("L2").size(), 1u);
    EXPECT_EQ(s.lines.at("L1")[0].order_id, "o1");
    EXPECT_EQ(s.lines.at("L2")[0].order_id, "o2");
}

TEST(Baseline, SerialPlacementWithChangeover) {
    Problem p = two_family_line();
    p.add(order("o1", "A", 0, 480, 1)).add(order("o2", "B", 0, 480, 2)).add(order("o3", "A", 0, 480, 3));
    const Schedule s = baseline_schedule(p.plant, p.catalog);
    const auto& jobs = s.lines.at("L1");
    ASSERT_EQ(jobs.size(), 3u);
    EXPECT_EQ(jobs[0], (Job{"o1", 0, 0, 30}));
    EXPECT_EQ(jobs[1], (Job{"o2", 30, 40, 85}));
    EXPECT_EQ(jobs[2], (Job{"o3", 85, 95, 125}));
    EXPECT_EQ(jobs, oracle_place_line(p.catalog, p.plant.lines[0], {"o1", "o2", "o3"}, 0));
}

TEST(Baseline, OrderSortIsPriorityReleaseId) {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L1", 10}}));
    p.add(order("b", "A", 0, 480, 2)).add(order("a", "A", 5, 480, 2)).add(order("c", "A", 0, 480, 1));
    p.add(line("L1"));
    const Schedule s = baseline_schedule(p.plant, p.catalog);
    const auto& jobs = s.lines.at("L1");
    ASSERT_EQ(jobs.size(), 3u);
    EXPECT_EQ(jobs[0].order_id, "c");
    EXPECT_EQ(jobs[1].order_id, "b");
    EXPECT_EQ(jobs[2].order_id, "a");
}

TEST(Baseline, StrandedOrderIsAnError) {
    Problem p = empty_problem();
    p.add(recipe("A", "FA", {{"L2", 10}})).add(order("o1", "A")).add(line("L1")).add(line("L2", LineState::Failed));
    try {
        baseline_schedule(p.plant, p.catalog);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        ASSERT_EQ(e.violations().size(), 1u);
        EXPECT_EQ(e.violations()[0].order_id, "o1");
    }
}

TEST(Placement, ReleaseCreatesIdleGapBeforeChangeover) {
    Problem p = two_family_line();
    p.add(order("o1", "A")).add(order("o2", "B", 100));
    LinePlacer placer(0, "");
    const Job a = placer.place(p.catalog.orders.at("o1"), p.catalog.recipes.at("A"), 30, p.catalog.changeovers);
    const Job b = placer.place(p.catalog.orders.at("o2"), p.catalog.recipes.at("B"), 45, p.catalog.changeovers);
    EXPECT_EQ(a, (Job{"o1", 0, 0, 30}));
    EXPECT_EQ(b.processing_start, 100);
    EXPECT_EQ(b.processing_start - b.changeover_start, 10);
    EXPECT_EQ(b.end, 145);
}

TEST(Codec, ScheduleRoundTrip) {
    const Schedule s{10, 480, {{"L1", {Job{"o1", 10, 20, 50}}}, {"L2", {Job{"o2", 0, 0, 5}, Job{"o3", 5, 9, 30}}}}};
    EXPECT_EQ(schedule_from_json(nlohmann::json::parse(to_json(s).dump())), s);
    // Lines without jobs carry no information and are not kept.
    Schedule with_empty = s;
    with_empty.lines["L3"];
    EXPECT_EQ(schedule_from_json(nlohmann::json::parse(to_json(with_empty).dump())), s);
}

// ---- properties over generated problems ------------------------------------

class ModelProperty : public ::testing::TestWithParam<int> {};

TEST_P(ModelProperty, BaselineAndDecodeAlwaysValidate) {
    const auto sc = generate_scenario(2 + GetParam() % 4, 6, 6 + GetParam() % 20, static_cast<std::uint64_t>(GetParam()));
    const auto catalog = sc.catalog();
    const PlantState plant = perturbed_plant(sc, static_cast<std::uint64_t>(GetParam()) * 7919);
    const Schedule base = baseline_schedule(plant, catalog);
    EXPECT_TRUE(validate_schedule(base, plant, catalog).empty());

    std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
    for (int trial = 0; trial < 10; ++trial) {
        opt::Chromosome c;
        c.perm = plant.open_orders;
        std::shuffle(c.perm.begin(), c.perm.end(), rng);
        for (const auto& id : c.perm) {
            std::vector<std::string> ok;
            for (const auto& l : plant.lines)
                if (l.state == LineState::Available && catalog.recipe_of_order(id)->duration_on(l.id)) ok.push_back(l.id);
            c.assign[id] = ok[rng() % ok.size()];
        }
        const Schedule s = opt::decode(c, plant, catalog);
        const auto vs = validate_schedule(s, plant, catalog);
        EXPECT_TRUE(vs.empty()) << (vs.empty() ? "" : vs[0].describe());

        // Decode equals the oracle placement of each line's subsequence.
        for (const auto& l : plant.lines) {
            std::vector<std::string> seq;
            for (const auto& id : c.perm)
                if (c.assign.at(id) == l.id) seq.push_back(id);
            auto it = s.lines.find(l.id);
            const std::vector<Job> got = it == s.lines.end() ? std::vector<Job>{} : it->second;
            EXPECT_EQ(got, oracle_place_line(catalog, l, seq, plant.shift_start));
        }
    }
}

TEST_P(ModelProperty, MetricsMatchDefinitionsAndArePure) {
    const auto sc = generate_scenario(3 + GetParam() % 3, 8, 10 + GetParam(), static_cast<std::uint64_t>(GetParam()) + 100);
    const auto catalog = sc.catalog();
    const PlantState plant = perturbed_plant(sc, static_cast<std::uint64_t>(GetParam()));
    const Schedule s = baseline_schedule(plant, catalog);
    RateFn rate = [&](const std::string& r, const std::string& l, const std::string& f) {
        return sc.true_rates.lookup(r, l, f);
    };
    const MetricsReport a = compute_metrics(s, {&catalog, &plant, rate, 1.0});
    const MetricsReport b = compute_metrics(s, {&catalog, &plant, rate, 1.0});
    EXPECT_EQ(a, b);

    const OracleMetrics o = oracle_metrics(s, plant, catalog, rate);
    EXPECT_EQ(static_cast<double>(a.total_usage), o.total_usage);
    Minutes sum = 0;
    for (const auto& [l, u] : a.per_line_usage) {
        sum += u;
        EXPECT_EQ(static_cast<double>(u), o.usage.at(l));
        EXPECT_NEAR(a.per_line_utilization.at(l), o.util.at(l), 1e-12);
    }
    EXPECT_EQ(sum, a.total_usage);
    EXPECT_NEAR(a.utilization_stddev, o.stddev, 1e-12);
    EXPECT_NEAR(a.expected_failure_cost, o.risk, 1e-9);
    EXPECT_EQ(static_cast<double>(a.total_tardiness), o.tardiness);
}

TEST_P(ModelProperty, RelabelingLinesPreservesUsageAndSpread) {
    const auto sc = generate_scenario(4, 8, 20, static_cast<std::uint64_t>(GetParam()) + 300);
    const auto catalog = sc.catalog();
    const PlantState plant = sc.initial_plant();
    const Schedule s = baseline_schedule(plant, catalog);

    // Rename every line id through a permutation, in the plant, catalog and schedule.
    std::vector<std::string> ids;
    for (const auto& l : plant.lines) ids.push_back(l.id);
    std::vector<std::string> shuffled = ids;
    std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::map<std::string, std::string> rename;
    for (std::size_t i = 0; i < ids.size(); ++i) rename[ids[i]] = "X" + shuffled[i];

    Catalog c2 = catalog;
    for (auto& [_, r] : c2.recipes) {
        std::map<std::string, Minutes> d;
        for (const auto& [l, m] : r.durations) d[rename.at(l)] = m;
        r.durations = d;
    }
    PlantState p2 = plant;
    for (auto& l : p2.lines) l.id = rename.at(l.id);
    std::sort(p2.lines.begin(), p2.lines.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    Schedule s2 = s;
    s2.lines.clear();
    for (const auto& [l, jobs] : s.lines) s2.lines[rename.at(l)] = jobs;

    const auto m1 = compute_metrics(s, {&catalog, &plant, {}, 1.0});
    const auto m2 = compute_metrics(s2, {&c2, &p2, {}, 1.0});
    EXPECT_EQ(m1.total_usage, m2.total_usage);
    EXPECT_NEAR(m1.utilization_stddev, m2.utilization_stddev, 1e-15);
}

TEST_P(ModelProperty, RemovingAJobNeverIncreasesUsage) {
    const auto sc = generate_scenario(3, 6, 15, static_cast<std::uint64_t>(GetParam()) + 500);
    const auto catalog = sc.catalog();
    const PlantState plant = sc.initial_plant();
    const Schedule s = baseline_schedule(plant, catalog);
    const auto before = compute_metrics(s, {&catalog, &plant, {}, 1.0});
    for (const auto& [line_id, jobs] : s.lines)
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            Schedule t = s;
            t.lines[line_id].erase(t.lines[line_id].begin() + static_cast<std::ptrdiff_t>(i));
            const auto after = compute_metrics(t, {&catalog, &plant, {}, 1.0});
            for (const auto& [l, u] : after.per_line_usage) EXPECT_LE(u, before.per_line_usage.at(l));
        }
}

INSTANTIATE_TEST_SUITE_P(Generated, ModelProperty, ::testing::Range(1, 21));
