#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dlab {

// Counter-based generator: each draw mixes (key, counter). The full state is
// two u64 words, so it serializes trivially and substreams never collide as
// long as their names differ.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);
    Rng(std::uint64_t key, std::uint64_t counter);

    // Derives an independent stream; the parent is not advanced.
    Rng substream(std::string_view name) const;
    Rng substream(std::uint64_t index) const;

    std::uint64_t next_u64();
    double u01();  // [0, 1)
    float uniform(float lo, float hi);
    float normal();            // standard normal, Box-Muller
    int uniform_int(int n);    // [0, n), unbiased

    // k distinct values from [0, n), in draw order.
    std::vector<int> sample_without_replacement(int n, int k);
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[i], v[static_cast<std::size_t>(j)]);
        }
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace dlab
