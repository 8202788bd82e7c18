#pragma once

#include <functional>
#include <string_view>

namespace hedonic::log {

using Sink = std::function<void(std::string_view)>;

/// Replaces the warning sink (default: stderr). Returns the previous sink.
Sink set_warning_sink(Sink sink);

void warn(std::string_view message);

/// Restores the previous sink on scope exit; handy for capturing warnings in tests.
class ScopedSink {
public:
    explicit ScopedSink(Sink sink) : previous_(set_warning_sink(std::move(sink))) {}
    ~ScopedSink() { set_warning_sink(std::move(previous_)); }
    ScopedSink(const ScopedSink&) = delete;
    ScopedSink& operator=(const ScopedSink&) = delete;

private:
    Sink previous_;
};

}  // namespace hedonic::log
