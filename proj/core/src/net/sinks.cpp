#include "ensemble/sinks.hpp"

#include "ensemble/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ensemble {

void LogSink::on_event(const SinkEvent& ev)
{
    *out_ << format_event(ev) << '\n';
}

void LogSink::flush()
{
    out_->flush();
}

MidiSink::MidiSink(const std::string& path)
    : out_(path, std::ios::binary)
{
    if (!out_)
        throw ConfigError("cannot open MIDI output " + path);
}

std::vector<std::uint8_t> MidiSink::encode(const SinkEvent& ev)
{
    const auto pitch = static_cast<std::uint8_t>(std::clamp(ev.pitch, 0, 127));
    if (ev.kind == NoteKind::NoteOn)
        return {0x90, pitch, static_cast<std::uint8_t>(std::clamp(ev.velocity, 1, 127))};
    return {0x80, pitch, 0};
}

void MidiSink::on_event(const SinkEvent& ev)
{
    const auto bytes = encode(ev);
    out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out_.flush();
}

void MidiSink::on_volume(const VolumeRamp& ramp)
{
    // No ramping on the wire; jump to the target.
    const auto v = static_cast<char>(std::lround(std::clamp(ramp.target, 0.0, 1.0) * 127.0));
    const char bytes[] = {static_cast<char>(0xB0), 7, v};
    out_.write(bytes, sizeof bytes);
    out_.flush();
}

void MidiSink::flush()
{
    out_.flush();
}

RecordingSink::RecordingSink(std::unique_ptr<EventSink> inner, const std::string& path)
    : inner_(std::move(inner))
    , file_(path)
{
    if (!file_)
        throw ConfigError("cannot open record file " + path);
}

void RecordingSink::on_event(const SinkEvent& ev)
{
    file_ << format_event(ev) << '\n';
    inner_->on_event(ev);
}

void RecordingSink::on_volume(const VolumeRamp& ramp)
{
    inner_->on_volume(ramp);
}

void RecordingSink::flush()
{
    file_.flush();
    inner_->flush();
}

} // namespace ensemble
