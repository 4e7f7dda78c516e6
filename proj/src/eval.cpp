#include "dlab/eval.hpp"

#include <thread>

namespace dlab {

double exact_match_accuracy(const DecodeFn& decode,
                            const TaskDataset& dataset) {
    if (dataset.examples.empty())
        throw DataError("exact_match_accuracy: empty dataset");
    int correct = 0;
    for (const Example& ex : dataset.examples)
        if (decode(ex) == ex.answer) ++correct;
    return 100.0 * correct / static_cast<double>(dataset.examples.size());
}

double evaluate(const TinyLmm& model, const TaskDataset& dataset,
                int threads) {
    if (dataset.examples.empty()) throw DataError("evaluate: empty dataset");
    int n = static_cast<int>(dataset.examples.size());
    std::vector<char> correct(static_cast<std::size_t>(n), 0);

    auto score_range = [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            const Example& ex = dataset.examples[static_cast<std::size_t>(i)];
            std::vector<int> got = greedy_decode(
                model, ex.prompt, ex.visual,
                static_cast<int>(ex.answer.size()) + 1, vocab::kEoa);
            correct[static_cast<std::size_t>(i)] = got == ex.answer ? 1 : 0;
        }
    };

    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        score_range(0, n);
    } else {
        std::vector<std::thread> pool;
        int chunk = (n + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            int lo = t * chunk;
            int hi = std::min(n, lo + chunk);
            if (lo < hi) pool.emplace_back(score_range, lo, hi);
        }
        for (std::thread& t : pool) t.join();
    }

    // Fixed-order reduction.
    int total = 0;
    for (int i = 0; i < n; ++i) total += correct[static_cast<std::size_t>(i)];
    return 100.0 * total / static_cast<double>(n);
}

TaskBatch to_training_batch(const TaskDataset& dataset,
                            const std::vector<int>& indices) {
    TaskBatch batch;
    batch.items.reserve(indices.size());
    for (int i : indices) {
        if (i < 0 || i >= static_cast<int>(dataset.examples.size()))
            throw DataError("to_training_batch: index out of range");
        const Example& ex = dataset.examples[static_cast<std::size_t>(i)];
        TrainExample item;
        item.visual = ex.visual;
        item.prompt = ex.prompt;
        item.target = ex.answer;
        item.target.push_back(vocab::kEoa);
        batch.items.push_back(std::move(item));
    }
    return batch;
}

}  // namespace dlab
