#pragma once

#include "ensemble/performer.hpp"

#include <cstdint>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace ensemble {

class EventSink {
public:
    virtual ~EventSink() = default;
    virtual void on_event(const SinkEvent& ev) = 0;
    virtual void on_volume(const VolumeRamp& ramp) { (void)ramp; }
    virtual void flush() {}
};

class NullSink final : public EventSink {
public:
    void on_event(const SinkEvent&) override {}
};

/// One "tick,kind,pitch,velocity" line per event.
class LogSink final : public EventSink {
public:
    explicit LogSink(std::ostream& out) : out_(&out) {}
    void on_event(const SinkEvent& ev) override;
    void flush() override;

private:
    std::ostream* out_;
};

/// Raw MIDI bytes on channel 1 (note on/off, CC7 for volume) written to a
/// device node or file.
class MidiSink final : public EventSink {
public:
    explicit MidiSink(const std::string& path);
    void on_event(const SinkEvent& ev) override;
    void on_volume(const VolumeRamp& ramp) override;
    void flush() override;

    static std::vector<std::uint8_t> encode(const SinkEvent& ev);

private:
    std::ofstream out_;
};

/// Writes the event log to a file and forwards everything to `inner`.
class RecordingSink final : public EventSink {
public:
    RecordingSink(std::unique_ptr<EventSink> inner, const std::string& path);
    void on_event(const SinkEvent& ev) override;
    void on_volume(const VolumeRamp& ramp) override;
    void flush() override;

private:
    std::unique_ptr<EventSink> inner_;
    std::ofstream file_;
};

} // namespace ensemble
