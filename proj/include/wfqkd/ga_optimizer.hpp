#pragma once

/// @file ga_optimizer.hpp
/// @brief Rank-roulette genetic algorithm over quantized phase masks.
///
/// One generation: evaluate and rank the population, breed population/2
/// offspring (roulette parent selection on 1/rank, uniform binary-template
/// crossover, per-block mutation with an exponentially decaying rate), then
/// replace the bottom half of the ranking with the offspring. The initial
/// population holds one blank mask so the best initial fitness never falls
/// below the unmodulated channel.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "phase_mask.hpp"
#include "rng.hpp"

namespace wfqkd::ga {

struct GAConfig {
    std::size_t population_size = 20;
    std::size_t generations = 1000;
    double initial_rate = 0.1;  // R0
    double final_rate = 0.013;  // R_end
    double decay = 200.0;       // lambda, in generations
    double quant_step = default_quant_step;
    std::uint64_t seed = 1;
    bool reevaluate_survivors = true;
    std::size_t mask_width = default_mask_side;
    std::size_t mask_height = default_mask_side;
    /// Worker threads for fitness evaluation; results do not depend on it.
    std::size_t threads = 1;

    void validate() const {
        if (population_size < 4 || population_size % 2 != 0)
            throw std::invalid_argument("GAConfig: population_size must be even and >= 4");
        if (!(final_rate >= 0.0 && final_rate <= initial_rate && initial_rate <= 1.0))
            throw std::invalid_argument("GAConfig: need 0 <= final_rate <= initial_rate <= 1");
        if (!(decay > 0.0)) throw std::invalid_argument("GAConfig: decay must be positive");
        if (mask_width == 0 || mask_height == 0)
            throw std::invalid_argument("GAConfig: mask dimensions must be positive");
        if (threads == 0) throw std::invalid_argument("GAConfig: threads must be >= 1");
        (void)quant_levels(quant_step);
    }
};

/// Anything that returns one (possibly noisy) nonnegative fitness sample for
/// a mask, drawing its randomness only from the supplied generator.
template <typename O>
concept FitnessOracle = requires(const O& oracle, const PhaseMask& mask, Rng& rng) {
    { oracle.evaluate(mask, rng) } -> std::convertible_to<double>;
};

using wfqkd::EvaluationError;

struct Population {
    std::vector<PhaseMask> patterns;
    std::vector<double> fitnesses;  // valid where evaluated[i] != 0
    std::vector<char> evaluated;
    std::vector<std::size_t> ranks;  // K_i, 1 = best; empty until ranked

    std::size_t size() const noexcept { return patterns.size(); }
    bool is_ranked() const noexcept { return ranks.size() == patterns.size() && !ranks.empty(); }

    /// Index of the rank-1 pattern.
    std::size_t best_index() const {
        for (std::size_t i = 0; i < ranks.size(); ++i)
            if (ranks[i] == 1) return i;
        throw std::logic_error("Population: not ranked");
    }
};

/// Ranks by descending fitness; ties go to the lower index.
inline std::vector<std::size_t> rank_by_fitness(std::span<const double> fitnesses) {
    std::vector<std::size_t> order(fitnesses.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fitnesses[a] > fitnesses[b]; });
    std::vector<std::size_t> ranks(fitnesses.size());
    for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = r + 1;
    return ranks;
}

inline PhaseMask random_lattice_mask(std::size_t width, std::size_t height, double step, Rng& rng) {
    const std::size_t levels = quant_levels(step);
    std::uniform_int_distribution<std::size_t> level(0, levels - 1);
    std::vector<double> phases(width * height);
    for (auto& p : phases) p = level_phase(level(rng), levels);
    return {width, height, std::move(phases)};
}

/// population_size - 1 random lattice masks followed by one blank mask.
inline Population init_population(const GAConfig& config) {
    config.validate();
    auto rng = make_rng(config.seed, {stream::ga_init});
    Population pop;
    pop.patterns.reserve(config.population_size);
    for (std::size_t i = 0; i + 1 < config.population_size; ++i)
        pop.patterns.push_back(
            random_lattice_mask(config.mask_width, config.mask_height, config.quant_step, rng));
    pop.patterns.push_back(PhaseMask::blank(config.mask_width, config.mask_height));
    pop.fitnesses.assign(config.population_size, 0.0);
    pop.evaluated.assign(config.population_size, 0);
    return pop;
}

/// Where evaluation randomness comes from: pattern i of generation n samples
/// from substream (seed, n, i) regardless of which thread runs it.
struct EvaluationPlan {
    std::uint64_t seed = 0;
    std::uint64_t generation = 0;
    bool reevaluate_all = true;
    std::size_t threads = 1;
};

template <FitnessOracle O>
Population evaluate_and_rank(Population pop, const O& oracle, const EvaluationPlan& plan) {
    const std::size_t n = pop.size();
    if (n == 0) throw std::invalid_argument("evaluate_and_rank: empty population");
    pop.fitnesses.resize(n, 0.0);
    pop.evaluated.resize(n, 0);

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < n; ++i)
        if (plan.reevaluate_all || !pop.evaluated[i]) todo.push_back(i);

    std::vector<std::exception_ptr> errors(n);
    auto work = [&](std::size_t i) {
        try {
            auto rng = make_rng(plan.seed, {stream::ga_eval, plan.generation, i});
            const double f = static_cast<double>(oracle.evaluate(pop.patterns[i], rng));
            if (!(f >= 0.0) || !std::isfinite(f))
                throw EvaluationError("oracle returned an invalid fitness");
            pop.fitnesses[i] = f;
            pop.evaluated[i] = 1;
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    const std::size_t workers = std::min(plan.threads, todo.size());
    if (workers <= 1) {
        for (auto i : todo) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < todo.size(); k = next++) work(todo[k]);
            });
    }
    // Report the lowest-index failure so serial and parallel runs agree.
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    pop.ranks = rank_by_fitness(pop.fitnesses);
    return pop;
}

/// Roulette probabilities: weight_i proportional to 1/K_i, normalized.
inline std::vector<double> selection_weights(std::span<const std::size_t> ranks) {
    std::vector<double> w(ranks.size());
    double total = 0.0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        if (ranks[i] == 0) throw std::invalid_argument("selection_weights: ranks start at 1");
        w[i] = 1.0 / static_cast<double>(ranks[i]);
        total += w[i];
    }
    for (auto& x : w) x /= total;
    return w;
}

struct ParentPair {
    std::size_t ma;
    std::size_t pa;
};

/// Draws ma by roulette, then pa from the rest with renormalized weights.
inline ParentPair select_parents(const Population& pop, Rng& rng) {
    if (pop.size() < 2) throw std::invalid_argument("select_parents: need at least two patterns");
    if (!pop.is_ranked()) throw std::invalid_argument("select_parents: population not ranked");
    auto w = selection_weights(pop.ranks);
    std::discrete_distribution<std::size_t> first(w.begin(), w.end());
    const std::size_t ma = first(rng);
    w[ma] = 0.0;
    std::discrete_distribution<std::size_t> second(w.begin(), w.end());
    return {ma, second(rng)};
}

/// offspring_j = ma_j where template_j is set, pa_j otherwise.
inline PhaseMask crossover(const PhaseMask& ma, const PhaseMask& pa,
                           std::span<const bool> binary_template) {
    if (!ma.same_shape(pa)) throw std::invalid_argument("crossover: parent dimensions differ");
    if (binary_template.size() != ma.size())
        throw std::invalid_argument("crossover: template size does not match parents");
    std::vector<double> child(ma.size());
    for (std::size_t j = 0; j < ma.size(); ++j) child[j] = binary_template[j] ? ma[j] : pa[j];
    return {ma.width(), ma.height(), std::move(child)};
}

inline PhaseMask crossover(const PhaseMask& ma, const PhaseMask& pa, Rng& rng) {
    if (!ma.same_shape(pa)) throw std::invalid_argument("crossover: parent dimensions differ");
    std::bernoulli_distribution coin(0.5);
    std::vector<double> child(ma.size());
    for (std::size_t j = 0; j < ma.size(); ++j) child[j] = coin(rng) ? ma[j] : pa[j];
    return {ma.width(), ma.height(), std::move(child)};
}

/// R(n) = (R0 - R_end) exp(-n / lambda) + R_end
inline double mutation_rate(double generation, const GAConfig& config) {
    if (generation < 0.0) throw std::invalid_argument("mutation_rate: negative generation");
    return (config.initial_rate - config.final_rate) * std::exp(-generation / config.decay) +
           config.final_rate;
}

/// Each block is redrawn uniformly over the lattice with probability `rate`.
inline PhaseMask mutate(const PhaseMask& pattern, double rate, double step, Rng& rng) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("mutate: rate outside [0, 1]");
    const std::size_t levels = quant_levels(step);
    std::bernoulli_distribution hit(rate);
    std::uniform_int_distribution<std::size_t> level(0, levels - 1);
    PhaseMask out = pattern;
    for (std::size_t j = 0; j < out.size(); ++j)
        if (hit(rng)) out.set(j, level_phase(level(rng), levels));
    return out;
}

/// Keeps ranks 1..P/2 (in rank order, fitness cached) and appends offspring.
inline Population replace(const Population& ranked, std::vector<PhaseMask> offspring) {
    if (!ranked.is_ranked()) throw std::invalid_argument("replace: population not ranked");
    const std::size_t half = ranked.size() / 2;
    if (offspring.size() != ranked.size() - half)
        throw std::invalid_argument("replace: offspring count must equal population_size / 2");

    std::vector<std::size_t> by_rank(ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) by_rank[ranked.ranks[i] - 1] = i;

    Population next;
    next.patterns.reserve(ranked.size());
    for (std::size_t r = 0; r < half; ++r) {
        const std::size_t i = by_rank[r];
        next.patterns.push_back(ranked.patterns[i]);
        next.fitnesses.push_back(ranked.fitnesses[i]);
        next.evaluated.push_back(ranked.evaluated[i]);
    }
    for (auto& child : offspring) {
        if (!child.same_shape(next.patterns.front()))
            throw std::invalid_argument("replace: offspring dimensions differ");
        next.patterns.push_back(std::move(child));
        next.fitnesses.push_back(0.0);
        next.evaluated.push_back(0);
    }
    return next;
}

struct GenerationRecord {
    std::size_t generation;
    double best_fitness;
    double mean_fitness;
    double mutation_rate;
};

struct OptimizationHistory {
    std::vector<GenerationRecord> records;
    PhaseMask best_mask;
    double best_fitness = 0.0;
    /// Set when the oracle failed; records hold the generations completed before.
    std::optional<std::string> error;

    bool ok() const noexcept { return !error.has_value(); }
};

inline GenerationRecord summarize(const Population& pop, std::size_t generation, double rate) {
    const auto best = pop.best_index();
    const double mean = std::accumulate(pop.fitnesses.begin(), pop.fitnesses.end(), 0.0) /
                        static_cast<double>(pop.size());
    return {generation, pop.fitnesses[best], mean, rate};
}

/// Breeds population/2 offspring from a ranked population.
inline std::vector<PhaseMask> breed(const Population& ranked, double rate, double step, Rng& rng) {
    std::vector<PhaseMask> offspring;
    const std::size_t count = ranked.size() - ranked.size() / 2;
    offspring.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const auto [ma, pa] = select_parents(ranked, rng);
        offspring.push_back(
            mutate(crossover(ranked.patterns[ma], ranked.patterns[pa], rng), rate, step, rng));
    }
    return offspring;
}

/// Runs the full loop. Generation n is evaluated, recorded with R(n), and
/// (for n < generations) bred with R(n). History length is generations + 1.
template <FitnessOracle O>
OptimizationHistory run(const GAConfig& config, const O& oracle) {
    config.validate();
    OptimizationHistory history;
    history.records.reserve(config.generations + 1);

    Population pop = init_population(config);
    auto breed_rng = make_rng(config.seed, {stream::ga_breed});

    for (std::size_t n = 0;; ++n) {
        const double rate = mutation_rate(static_cast<double>(n), config);
        try {
            pop = evaluate_and_rank(std::move(pop), oracle,
                                    {config.seed, n, config.reevaluate_survivors, config.threads});
        } catch (const std::exception& e) {
            history.error = "generation " + std::to_string(n) + ": " + e.what();
            break;
        }
        history.records.push_back(summarize(pop, n, rate));
        const auto best = pop.best_index();
        history.best_mask = pop.patterns[best];
        history.best_fitness = pop.fitnesses[best];
        if (n == config.generations) break;
        pop = replace(pop, breed(pop, rate, config.quant_step, breed_rng));
    }
    return history;
}

} // namespace wfqkd::ga
