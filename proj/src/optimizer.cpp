#include "resched/optimizer.hpp"

#include <algorithm>
#include <numeric>

#include "resched/digest.hpp"
#include "resched/rng.hpp"

namespace resched::opt {

using nlohmann::json;
using nlohmann::ordered_json;

void ObjectiveWeights::validate() const {
    for (double w : {usage, balance, risk, tardiness})
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error("objective weights must be finite and non-negative");
    if (!(usage + balance + risk + tardiness > 0.0)) throw Error("objective weights must not all be zero");
}

void GaParams::validate() const {
    if (population < 2) throw Error("ga: population must be >= 2");
    if (elites < 0 || elites >= population) throw Error("ga: elites must be in [0, population)");
    if (generations < 0) throw Error("ga: generations must be >= 0");
    if (stall_limit < 1) throw Error("ga: stall_limit must be >= 1");
    if (tournament_size < 1) throw Error("ga: tournament_size must be >= 1");
    for (double r : {crossover_rate, swap_mutation_rate, reassign_mutation_rate})
        if (!(r >= 0.0 && r <= 1.0)) throw Error("ga: rates must be in [0,1]");
}

FitnessVector FitnessVector::from(const MetricsReport& m) {
    return FitnessVector{static_cast<double>(m.total_usage), m.utilization_stddev, m.expected_failure_cost,
                         static_cast<double>(m.total_tardiness)};
}

double scalar_fitness(const FitnessVector& fv, const ObjectiveWeights& w, const FitnessVector& b) {
    auto norm = [](double v, double base) { return v / (base > 0.0 ? base : 1.0); };
    return w.usage * norm(fv.total_usage, b.total_usage) +
           w.balance * norm(fv.utilization_stddev, b.utilization_stddev) +
           w.risk * norm(fv.expected_failure_cost, b.expected_failure_cost) +
           w.tardiness * norm(fv.total_tardiness, b.total_tardiness);
}

Schedule decode(const Chromosome& c, const PlantState& plant, const Catalog& catalog) {
    Schedule s;
    s.shift_start = plant.shift_start;
    s.shift_length = plant.shift_length;
    std::map<std::string, LinePlacer> placers;
    for (const auto& l : plant.lines)
        placers.emplace(l.id, LinePlacer(std::max(l.ready_at, plant.shift_start), l.last_family));
    for (const auto& id : c.perm) {
        const Order* order = catalog.order(id);
        if (!order) throw Error("decode: unknown order '" + id + "'");
        const Recipe& recipe = *catalog.recipe(order->recipe_id);
        const std::string& line = c.assign.at(id);
        const auto duration = recipe.duration_on(line);
        auto it = placers.find(line);
        if (!duration || it == placers.end()) throw Error("decode: order '" + id + "' cannot run on " + line);
        s.lines[line].push_back(it->second.place(*order, recipe, *duration, catalog.changeovers));
    }
    return s;
}

namespace {

/// Index-based mirror of decode + compute_metrics, summing in the same order so
/// results agree bit for bit.
class Evaluator {
  public:
    Evaluator(const PlantState& plant, const Catalog& catalog, const RateFn& rate)
        : shift_start_(plant.shift_start), shift_length_(plant.shift_length) {
        if (shift_length_ <= 0) throw Error("degenerate shift");
        std::map<std::string, int> family_index;
        auto family = [&](const std::string& f) {
            auto [it, inserted] = family_index.emplace(f, static_cast<int>(family_index.size()));
            return it->second;
        };
        family("");
        for (const auto& l : plant.lines) {
            if (l.state != LineState::Available) continue;
            lines.push_back(l.id);
            line_ready_.push_back(std::max(l.ready_at, plant.shift_start));
            line_family_.push_back(family(l.last_family));
        }
        orders = plant.open_orders;
        std::sort(orders.begin(), orders.end());
        std::vector<const Recipe*> recipes;
        for (const auto& id : orders) {
            const Order* o = catalog.order(id);
            if (!o) throw Error("unknown order '" + id + "'");
            recipes.push_back(catalog.recipe(o->recipe_id));
            release_.push_back(o->release);
            due_.push_back(o->due);
            priority_.push_back(o->priority);
            family_.push_back(family(recipes.back()->family));
        }
        const std::size_t n = orders.size();
        const std::size_t nl = lines.size();
        const std::size_t nf = family_index.size();
        std::vector<std::string> family_names(nf);
        for (const auto& [name, idx] : family_index) family_names[idx] = name;

        compatible.resize(n);
        duration_.assign(n * nl, -1);
        rate_.assign(n * nl * nf, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t l = 0; l < nl; ++l) {
                const auto d = recipes[i]->duration_on(lines[l]);
                if (!d) continue;
                compatible[i].push_back(static_cast<int>(l));
                duration_[i * nl + l] = *d;
                if (rate)
                    for (std::size_t f = 0; f < nf; ++f)
                        rate_[(i * nl + l) * nf + f] = rate(recipes[i]->id, lines[l], family_names[f]);
            }
        changeover_.assign(nf * nf, 0);
        for (std::size_t a = 0; a < nf; ++a)
            for (std::size_t b = 0; b < nf; ++b)
                changeover_[a * nf + b] = catalog.changeovers.minutes(family_names[a], family_names[b]);
        nf_ = nf;
        finish_.resize(nl);
        fam_.resize(nl);
        busy_.resize(nl);
        risk_.resize(nl);
        tard_.resize(nl);
        used_.resize(nl);
        utils_.resize(nl);
    }

    FitnessVector evaluate(const std::vector<int>& perm, const std::vector<int>& assign) {
        const std::size_t nl = lines.size();
        for (std::size_t l = 0; l < nl; ++l) {
            finish_[l] = line_ready_[l];
            fam_[l] = line_family_[l];
            busy_[l] = 0;
            risk_[l] = 0.0;
            tard_[l] = 0;
            used_[l] = false;
        }
        for (int i : perm) {
            const int l = assign[i];
            const Minutes co = changeover_[fam_[l] * nf_ + family_[i]];
            const Minutes processing = std::max(finish_[l] + co, release_[i]);
            const Minutes duration = duration_[i * nl + l];
            const Minutes end = processing + duration;
            busy_[l] += end - (processing - co);
            tard_[l] += std::max<Minutes>(0, end - due_[i]);
            risk_[l] += rate_[(i * nl + l) * nf_ + fam_[l]] * static_cast<double>(end - processing) * 1.0;
            finish_[l] = end;
            fam_[l] = family_[i];
            used_[l] = true;
        }
        Minutes usage = 0;
        Minutes tardiness = 0;
        double risk = 0.0;
        for (std::size_t l = 0; l < nl; ++l) {
            usage += used_[l] ? finish_[l] - shift_start_ : 0;
            utils_[l] = static_cast<double>(busy_[l]) / static_cast<double>(shift_length_);
            risk += risk_[l];
            tardiness += tard_[l];
        }
        return FitnessVector{static_cast<double>(usage), population_stddev(utils_), risk,
                             static_cast<double>(tardiness)};
    }

    Chromosome chromosome(const std::vector<int>& perm, const std::vector<int>& assign) const {
        Chromosome c;
        for (int i : perm) {
            c.perm.push_back(orders[i]);
            c.assign[orders[i]] = lines[assign[i]];
        }
        return c;
    }

    int priority(int i) const { return priority_[i]; }
    Minutes release(int i) const { return release_[i]; }
    Minutes duration(int i, int l) const { return duration_[i * lines.size() + l]; }

    std::vector<std::string> orders;
    std::vector<std::string> lines;
    std::vector<std::vector<int>> compatible;

  private:
    Minutes shift_start_;
    Minutes shift_length_;
    std::vector<Minutes> line_ready_;
    std::vector<int> line_family_;
    std::vector<Minutes> release_, due_;
    std::vector<int> priority_, family_;
    std::vector<Minutes> duration_;
    std::vector<double> rate_;
    std::vector<Minutes> changeover_;
    std::size_t nf_ = 0;

    std::vector<Minutes> finish_;
    std::vector<int> fam_;
    std::vector<Minutes> busy_;
    std::vector<double> risk_;
    std::vector<Minutes> tard_;
    std::vector<char> used_;
    std::vector<double> utils_;
};

struct Genome {
    std::vector<int> perm;
    std::vector<int> assign;
    double fitness = 0.0;
};

void require_schedulable(const PlantState& plant, const Catalog& catalog) {
    for (const auto& id : plant.open_orders)
        if (!catalog.order(id) || !catalog.recipe_of_order(id))
            throw ValidationError("orders cannot be scheduled", {{"unknown reference", id, "", "unknown order or recipe"}});
    if (auto stranded = stranded_orders(plant, catalog); !stranded.empty()) {
        std::vector<Violation> vs;
        for (const auto& id : stranded) vs.push_back({"stranded order", id, "", "no compatible Available line"});
        throw ValidationError("orders cannot be scheduled", std::move(vs));
    }
}

class Ga {
  public:
    Ga(Evaluator& eval, const ObjectiveWeights& w, const GaParams& p, const FitnessVector& baseline)
        : eval_(eval), w_(w), p_(p), baseline_(baseline), rng_(derive_seed(p.seed, 0x6761)) {}

    double score(Genome& g) {
        g.fitness = scalar_fitness(eval_.evaluate(g.perm, g.assign), w_, baseline_);
        return g.fitness;
    }

    Genome random_genome() {
        const int n = static_cast<int>(eval_.orders.size());
        Genome g;
        g.perm.resize(n);
        std::iota(g.perm.begin(), g.perm.end(), 0);
        for (int i = n - 1; i > 0; --i) std::swap(g.perm[i], g.perm[rng_.below(i + 1)]);
        g.assign.resize(n);
        for (int i = 0; i < n; ++i) {
            const auto& c = eval_.compatible[i];
            g.assign[i] = c[rng_.below(c.size())];
        }
        return g;
    }

    std::size_t tournament(const std::vector<Genome>& pop) {
        std::size_t best = rng_.below(pop.size());
        for (int t = 1; t < p_.tournament_size; ++t) {
            const std::size_t c = rng_.below(pop.size());
            if (pop[c].fitness < pop[best].fitness || (pop[c].fitness == pop[best].fitness && c < best)) best = c;
        }
        return best;
    }

    Genome crossover(const Genome& a, const Genome& b) {
        const std::size_t n = a.perm.size();
        Genome child;
        child.perm.assign(n, -1);
        std::size_t lo = rng_.below(n);
        std::size_t hi = rng_.below(n);
        if (lo > hi) std::swap(lo, hi);
        std::vector<char> taken(n, 0);
        for (std::size_t k = lo; k <= hi; ++k) {
            child.perm[k] = a.perm[k];
            taken[a.perm[k]] = 1;
        }
        std::size_t pos = (hi + 1) % n;
        for (std::size_t k = 0; k < n; ++k) {
            const int gene = b.perm[(hi + 1 + k) % n];
            if (taken[gene]) continue;
            child.perm[pos] = gene;
            pos = (pos + 1) % n;
        }
        child.assign.resize(n);
        for (std::size_t i = 0; i < n; ++i) child.assign[i] = rng_.uniform() < 0.5 ? a.assign[i] : b.assign[i];
        repair(child);
        return child;
    }

    void repair(Genome& g) const {
        for (std::size_t i = 0; i < g.assign.size(); ++i) {
            const auto& c = eval_.compatible[i];
            if (std::find(c.begin(), c.end(), g.assign[i]) != c.end()) continue;
            int best = c.front();
            for (int l : c)
                if (eval_.duration(static_cast<int>(i), l) < eval_.duration(static_cast<int>(i), best)) best = l;
            g.assign[i] = best;
        }
    }

    void mutate(Genome& g) {
        const std::size_t n = g.perm.size();
        if (rng_.uniform() < p_.swap_mutation_rate && n > 1)
            std::swap(g.perm[rng_.below(n)], g.perm[rng_.below(n)]);
        if (rng_.uniform() < p_.reassign_mutation_rate && n > 0) {
            const std::size_t i = rng_.below(n);
            const auto& c = eval_.compatible[i];
            g.assign[i] = c[rng_.below(c.size())];
        }
    }

    Xoshiro256& rng() { return rng_; }

  private:
    Evaluator& eval_;
    const ObjectiveWeights& w_;
    const GaParams& p_;
    FitnessVector baseline_;
    Xoshiro256 rng_;
};

Genome baseline_genome(const Evaluator& eval, const Schedule& baseline) {
    const int n = static_cast<int>(eval.orders.size());
    Genome g;
    g.perm.resize(n);
    std::iota(g.perm.begin(), g.perm.end(), 0);
    std::sort(g.perm.begin(), g.perm.end(), [&](int a, int b) {
        return std::tuple(eval.priority(a), eval.release(a), eval.orders[a]) <
               std::tuple(eval.priority(b), eval.release(b), eval.orders[b]);
    });
    g.assign.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        const auto where = baseline.find(eval.orders[i]);
        const auto it = std::find(eval.lines.begin(), eval.lines.end(), where->first);
        g.assign[i] = static_cast<int>(it - eval.lines.begin());
    }
    return g;
}

FitnessVector metrics_of(const Schedule& s, const PlantState& plant, const Catalog& catalog, const RateFn& rate) {
    MetricsContext ctx{&catalog, &plant, rate, 1.0};
    return FitnessVector::from(compute_metrics(s, ctx));
}

}  // namespace

OptimizeResult optimize_reactive(const PlantState& plant, const Catalog& catalog, const RateFn& rate,
                                 const ObjectiveWeights& weights, const GaParams& params) {
    weights.validate();
    params.validate();
    require_schedulable(plant, catalog);

    const Schedule baseline = baseline_schedule(plant, catalog);
    OptimizeResult out;
    out.baseline_fitness = metrics_of(baseline, plant, catalog, rate);
    out.baseline_scalar = scalar_fitness(out.baseline_fitness, weights, out.baseline_fitness);

    Evaluator eval(plant, catalog, rate);
    Ga ga(eval, weights, params, out.baseline_fitness);

    std::vector<Genome> pop;
    pop.push_back(baseline_genome(eval, baseline));
    while (pop.size() < static_cast<std::size_t>(params.population)) pop.push_back(ga.random_genome());
    for (auto& g : pop) ga.score(g);

    auto argmin = [](const std::vector<Genome>& p) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < p.size(); ++i)
            if (p[i].fitness < p[best].fitness) best = i;
        return best;
    };
    Genome incumbent = pop[argmin(pop)];
    out.best_history.push_back(incumbent.fitness);

    bool singleton = eval.orders.size() <= 1;
    for (const auto& c : eval.compatible) singleton = singleton && c.size() == 1;
    const int generations = singleton ? std::min(params.generations, 1) : params.generations;

    int stall = 0;
    for (int gen = 0; gen < generations && stall < params.stall_limit; ++gen) {
        std::vector<std::size_t> rank(pop.size());
        std::iota(rank.begin(), rank.end(), 0);
        std::stable_sort(rank.begin(), rank.end(),
                         [&](std::size_t a, std::size_t b) { return pop[a].fitness < pop[b].fitness; });
        std::vector<Genome> next;
        next.reserve(pop.size());
        for (int e = 0; e < params.elites; ++e) next.push_back(pop[rank[e]]);
        while (next.size() < pop.size()) {
            const std::size_t a = ga.tournament(pop);
            const std::size_t b = ga.tournament(pop);
            Genome child = ga.rng().uniform() < params.crossover_rate && !pop[a].perm.empty()
                               ? ga.crossover(pop[a], pop[b])
                               : pop[a];
            ga.mutate(child);
            ga.score(child);
            next.push_back(std::move(child));
        }
        pop = std::move(next);
        ++out.generations_run;
        const Genome& best = pop[argmin(pop)];
        if (best.fitness < incumbent.fitness) {
            incumbent = best;
            stall = 0;
        } else {
            ++stall;
        }
        out.best_history.push_back(incumbent.fitness);
    }

    out.best = eval.chromosome(incumbent.perm, incumbent.assign);
    out.schedule = decode(out.best, plant, catalog);
    out.fitness = metrics_of(out.schedule, plant, catalog, rate);
    out.scalar = scalar_fitness(out.fitness, weights, out.baseline_fitness);
    return out;
}

PlantState with_line_failed(const PlantState& plant, const std::string& line) {
    PlantState p = plant;
    LineStatus* l = p.line(line);
    if (!l) throw Error("unknown line '" + line + "'");
    l->state = LineState::Failed;
    if (!l->in_flight.empty()) {
        p.open_orders.push_back(l->in_flight);
        std::sort(p.open_orders.begin(), p.open_orders.end());
        l->in_flight.clear();
        l->ready_at = p.clock;
    }
    return p;
}

std::string plant_fingerprint(const PlantState& plant, const analytics::AnalyticsState& analytics) {
    ordered_json j;
    ordered_json lines = ordered_json::array();
    for (const auto& l : plant.lines) {
        if (l.state != LineState::Available) {
            lines.push_back({{"id", l.id}, {"state", to_string(l.state)}});
            continue;
        }
        lines.push_back({{"id", l.id},
                         {"state", to_string(l.state)},
                         {"ready_at", l.ready_at},
                         {"last_family", l.last_family},
                         {"in_flight", l.in_flight}});
    }
    j["lines"] = std::move(lines);
    std::vector<std::string> open = plant.open_orders;
    std::sort(open.begin(), open.end());
    j["open_orders"] = open;
    j["analytics_batch_seq"] = analytics.last_batch_seq;
    return sha256_hex(j.dump());
}

std::uint64_t contingency_seed(std::uint64_t master, const std::string& line) { return master + fnv1a64(line); }

std::map<std::string, Contingency> optimize_predictive(const PlantState& plant, const Catalog& catalog,
                                                       const analytics::AnalyticsState& analytics,
                                                       const ObjectiveWeights& weights,
                                                       const GaParams& params, int k) {
    if (k < 1) throw Error("predictive optimization needs k >= 1");
    weights.validate();
    params.validate();
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& id : plant.available_lines()) ranked.emplace_back(analytics::line_hazard(analytics, id).hazard, id);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    if (ranked.size() > static_cast<std::size_t>(k)) ranked.resize(k);

    const RateFn rate = analytics::rate_fn(analytics);
    std::map<std::string, Contingency> out;
    for (const auto& [hazard, line] : ranked) {
        Contingency c;
        c.line_id = line;
        c.hazard = hazard;
        c.seed = contingency_seed(params.seed, line);
        const PlantState hypothetical = with_line_failed(plant, line);
        c.fingerprint = plant_fingerprint(hypothetical, analytics);
        c.stranded = stranded_orders(hypothetical, catalog);
        if (c.stranded.empty()) {
            GaParams p = params;
            p.seed = c.seed;
            c.result = optimize_reactive(hypothetical, catalog, rate, weights, p);
            c.feasible = true;
        }
        out.emplace(line, std::move(c));
    }
    return out;
}

OracleResult brute_force_optimum(const PlantState& plant, const Catalog& catalog, const RateFn& rate,
                                 const ObjectiveWeights& weights) {
    weights.validate();
    if (plant.open_orders.size() > kOracleMaxOrders || plant.available_lines().size() > kOracleMaxLines)
        throw Error("instance too large for oracle");
    require_schedulable(plant, catalog);

    const FitnessVector base = metrics_of(baseline_schedule(plant, catalog), plant, catalog, rate);
    Evaluator eval(plant, catalog, rate);
    const std::size_t n = eval.orders.size();
    const std::size_t nl = eval.lines.size();

    OracleResult out;
    bool have = false;
    std::vector<std::pair<int, int>> best_key;
    std::vector<int> best_perm, best_assign;

    std::vector<std::size_t> digit(n, 0);
    std::vector<int> assign(n);
    std::vector<std::vector<int>> per_line(nl);
    std::vector<int> perm;
    perm.reserve(n);

    // Key: (line index, order index) pairs, lines ascending then position.
    auto consider = [&]() {
        perm.clear();
        for (const auto& seq : per_line) perm.insert(perm.end(), seq.begin(), seq.end());
        const double f = scalar_fitness(eval.evaluate(perm, assign), weights, base);
        ++out.evaluated;
        if (have && f > out.scalar) return;
        std::vector<std::pair<int, int>> key;
        for (std::size_t l = 0; l < nl; ++l)
            for (int i : per_line[l]) key.emplace_back(static_cast<int>(l), i);
        if (have && f == out.scalar && !(key < best_key)) return;
        have = true;
        out.scalar = f;
        best_key = std::move(key);
        best_perm = perm;
        best_assign = assign;
    };
    auto permute = [&](auto& self, std::size_t l) -> void {
        if (l == nl) {
            consider();
            return;
        }
        auto& seq = per_line[l];
        std::sort(seq.begin(), seq.end());
        do self(self, l + 1);
        while (std::next_permutation(seq.begin(), seq.end()));
    };

    for (;;) {
        for (auto& seq : per_line) seq.clear();
        for (std::size_t i = 0; i < n; ++i) {
            assign[i] = eval.compatible[i][digit[i]];
            per_line[assign[i]].push_back(static_cast<int>(i));
        }
        permute(permute, 0);
        std::size_t i = 0;
        while (i < n && ++digit[i] == eval.compatible[i].size()) digit[i++] = 0;
        if (i == n) break;
    }

    out.best = eval.chromosome(best_perm, best_assign);
    out.schedule = decode(out.best, plant, catalog);
    out.fitness = metrics_of(out.schedule, plant, catalog, rate);
    out.scalar = scalar_fitness(out.fitness, weights, base);
    return out;
}

ordered_json to_json(const FitnessVector& fv) {
    return ordered_json{{"total_usage", fv.total_usage},
                        {"utilization_stddev", fv.utilization_stddev},
                        {"expected_failure_cost", fv.expected_failure_cost},
                        {"total_tardiness", fv.total_tardiness}};
}

ordered_json to_json(const ObjectiveWeights& w) {
    return ordered_json{{"w_usage", w.usage}, {"w_balance", w.balance}, {"w_risk", w.risk}, {"w_tardiness", w.tardiness}};
}

ordered_json to_json(const GaParams& p) {
    return ordered_json{{"population", p.population},
                        {"generations", p.generations},
                        {"stall_limit", p.stall_limit},
                        {"tournament_size", p.tournament_size},
                        {"crossover_rate", p.crossover_rate},
                        {"swap_mutation_rate", p.swap_mutation_rate},
                        {"reassign_mutation_rate", p.reassign_mutation_rate},
                        {"elites", p.elites},
                        {"seed", p.seed}};
}

ObjectiveWeights weights_from_json(const json& j, ObjectiveWeights w) {
    if (!j.is_object()) throw Error("weights must be an object");
    w.usage = j.value("w_usage", w.usage);
    w.balance = j.value("w_balance", w.balance);
    w.risk = j.value("w_risk", w.risk);
    w.tardiness = j.value("w_tardiness", w.tardiness);
    w.validate();
    return w;
}

GaParams params_from_json(const json& j, GaParams p) {
    if (!j.is_object()) throw Error("ga params must be an object");
    p.population = j.value("population", p.population);
    p.generations = j.value("generations", p.generations);
    p.stall_limit = j.value("stall_limit", p.stall_limit);
    p.tournament_size = j.value("tournament_size", p.tournament_size);
    p.crossover_rate = j.value("crossover_rate", p.crossover_rate);
    p.swap_mutation_rate = j.value("swap_mutation_rate", p.swap_mutation_rate);
    p.reassign_mutation_rate = j.value("reassign_mutation_rate", p.reassign_mutation_rate);
    p.elites = j.value("elites", p.elites);
    p.seed = j.value("seed", p.seed);
    p.validate();
    return p;
}

}  // namespace resched::opt
