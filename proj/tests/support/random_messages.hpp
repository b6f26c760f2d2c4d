#pragma once

#include "ensemble/protocol.hpp"

#include <random>
#include <string>

namespace testgen {

/// Produces arbitrary well-formed messages of every type.
class MessageFactory {
public:
    explicit MessageFactory(std::uint64_t seed) : rng_(seed) {}

    ensemble::proto::Message next()
    {
        using namespace ensemble;
        using namespace ensemble::proto;
        switch (int_in(0, 15)) {
        case 0: {
            Hello h{text(), static_cast<Role>(int_in(0, 2)), {}};
            if (coin())
                h.performer_id = id();
            return h;
        }
        case 1:
            return Welcome{id(), int_in(1, 16)};
        case 2:
            return Seed{progression(), sequence(), real(1.0, 300.0), kPpq};
        case 3:
            return Ready{id()};
        case 4:
            return Start{real(-1e9, 1e9)};
        case 5: {
            Stop s;
            if (coin())
                s.at_tick = tick();
            return s;
        }
        case 6:
            return ClockPing{real(-1e9, 1e9)};
        case 7:
            return ClockPong{real(-1e9, 1e9), real(-1e9, 1e9)};
        case 8:
            return GenStart{id(), tick()};
        case 9:
            return GenDone{id(), real(0.0, 1e6)};
        case 10:
            return control();
        case 11:
            return TempoChange{real(1.0, 300.0), int_in(0, 100000)};
        case 12: {
            Plan p;
            for (int i = 0, n = int_in(0, 6); i < n; ++i)
                p.instructions.push_back({int_in(0, 4096), text()});
            return p;
        }
        case 13:
            return Bye{id()};
        case 14: {
            Resync r{real(-1e9, 1e9), real(1.0, 300.0), {}, real(-1e9, 1e9), tick()};
            for (int i = 0, n = int_in(0, 5); i < n; ++i)
                r.tempo_changes.push_back({real(1.0, 300.0), int_in(0, 100000)});
            return r;
        }
        default:
            return Reject{text(), text()};
        }
    }

private:
    int int_in(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool coin() { return int_in(0, 1) == 1; }
    int id() { return int_in(0, 15); }
    ensemble::Tick tick() { return std::uniform_int_distribution<ensemble::Tick>(-1'000'000'000, 1'000'000'000)(rng_); }

    double real(double lo, double hi)
    {
        // Mix whole numbers in so integer-valued doubles are exercised too.
        const double v = std::uniform_real_distribution<double>(lo, hi)(rng_);
        return coin() ? v : std::round(v);
    }

    std::string text()
    {
        static const std::string alphabet =
            "abcdefghijklmnopqrstuvwxyz ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789\"\\/\n\t{}[]:,é♪";
        std::string s;
        for (int i = 0, n = int_in(0, 24); i < n; ++i) {
            // Keep multi-byte code points whole.
            const auto pos = static_cast<std::size_t>(int_in(0, static_cast<int>(alphabet.size()) - 1));
            std::size_t start = pos;
            while (start > 0 && (static_cast<unsigned char>(alphabet[start]) & 0xC0) == 0x80)
                --start;
            std::size_t len = 1;
            while (start + len < alphabet.size() && (static_cast<unsigned char>(alphabet[start + len]) & 0xC0) == 0x80)
                ++len;
            s += alphabet.substr(start, len);
        }
        return s;
    }

    ensemble::ChordProgression progression()
    {
        std::vector<ensemble::ProgressionEntry> entries;
        int bar = 0;
        for (int i = 0, n = int_in(1, 12); i < n; ++i) {
            entries.push_back({bar, {int_in(0, 11), static_cast<ensemble::ChordQuality>(int_in(0, 1))}});
            bar += int_in(1, 8);
        }
        return ensemble::ChordProgression(std::move(entries));
    }

    ensemble::NoteSequence sequence()
    {
        const int bars = int_in(1, 16);
        const ensemble::Tick end = ensemble::bar_to_tick(bars);
        std::vector<ensemble::NoteEvent> events;
        for (int i = 0, n = int_in(0, 20); i < n; ++i) {
            const ensemble::Tick onset = std::uniform_int_distribution<ensemble::Tick>(0, end - 1)(rng_);
            const ensemble::Tick dur = std::uniform_int_distribution<ensemble::Tick>(1, end - onset)(rng_);
            events.push_back({int_in(0, 127), onset, dur, int_in(0, 127)});
        }
        return ensemble::NoteSequence(bars, std::move(events));
    }

    ensemble::proto::Control control()
    {
        using ensemble::proto::ControlField;
        const auto field = static_cast<ControlField>(int_in(0, 4));
        double value = 0.0;
        switch (field) {
        case ControlField::Temperature: value = real(0.01, 4.0); break;
        case ControlField::Transpose: value = int_in(-36, 36); break;
        case ControlField::Volume: value = real(0.0, 1.0); break;
        case ControlField::Mode: value = int_in(0, 2); break;
        case ControlField::AutoFade: value = int_in(0, 1); break;
        }
        return {id(), field, value};
    }

    std::mt19937_64 rng_;
};

} // namespace testgen
