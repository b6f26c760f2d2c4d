#pragma once

// Reference implementations written independently of the library. They trade
// speed for obviousness and share no code with core/.

#include <cmath>
#include <cstdint>
#include <iterator>
#include <map>
#include <utility>
#include <vector>

namespace oracle {

/// Walks the sixteenth grid upwards from tick 0 until a grid tick lies at or
/// after the freeze start and at least freeze_tenths/10 ms after it. Integer
/// arithmetic only: one tick lasts 125/bpm ms at 480 ppq.
inline std::int64_t reinsertion_scan(std::int64_t start_tick, std::int64_t freeze_tenths_ms, std::int64_t bpm)
{
    for (std::int64_t g = 0;; g += 120) {
        if (g < start_tick)
            continue;
        // (g - start) * 125 / bpm >= freeze_tenths / 10
        if ((g - start_tick) * 1250 >= freeze_tenths_ms * bpm)
            return g;
    }
}

/// p_i^(1/T) / sum p_j^(1/T) in extended precision, straight from the definition.
inline std::vector<double> temperature_direct(const std::vector<double>& p, double t)
{
    std::vector<long double> w(p.size());
    long double total = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        w[i] = p[i] > 0 ? std::pow(static_cast<long double>(p[i]), 1.0L / t) : 0.0L;
        total += w[i];
    }
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        out[i] = static_cast<double>(w[i] / total);
    return out;
}

/// Offset from one ping under one-way delays `up` and `down`, the textbook way.
struct PingResult {
    double send;
    double server;
    double recv;
};

inline PingResult ping(double client_now, double true_offset, double up, double down)
{
    return {client_now, client_now + up + true_offset, client_now + up + down};
}

/// Multiset difference of note_on and note_off keys; empty when paired.
template <class Events, class IsOn, class Key>
auto unpaired(const Events& events, IsOn is_on, Key key)
{
    std::map<decltype(key(*std::begin(events))), int> balance;
    for (const auto& e : events) {
        const auto k = key(e);
        balance[k] += is_on(e) ? 1 : -1;
        if (balance[k] == 0)
            balance.erase(k);
    }
    return balance;
}

template <class Events, class IsOn>
auto unpaired(const Events& events, IsOn is_on)
{
    return unpaired(events, is_on, [](const auto& e) { return e.pitch; });
}

} // namespace oracle
