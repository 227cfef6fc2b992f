#pragma once

#include <stdexcept>
#include <string>

namespace bpshift {

enum class Err {
    NoBeatsFound,
    SignalTooShort,
    ConstantSignal,
    InsufficientLength,
    FiducialNotFound,
    DegenerateTiming,
    NoValidBeats,
    IndexOutOfRange,
    TooFewSegments,
    InsufficientClassCount,
    TooFewExamples,
    ShapeMismatch,
    InvalidSpec,
    MissingInitialBp,
    DivergedLoss,
    EmptyEvaluation,
    InvalidConfig,
    ConfigError,
    UsageError,
    IoError,
};

const char* err_name(Err kind);

class Error : public std::runtime_error {
public:
    Error(Err kind, const std::string& msg)
        : std::runtime_error(std::string(err_name(kind)) + ": " + msg), kind_(kind) {}
    Err kind() const noexcept { return kind_; }

private:
    Err kind_;
};

[[noreturn]] inline void raise(Err kind, const std::string& msg) {
    throw Error(kind, msg);
}

// sdPPG waves, in beat order.
enum class Wave { A, B, C, D, E };

const char* wave_name(Wave w);

class FiducialError : public Error {
public:
    FiducialError(Wave which, const std::string& msg)
        : Error(Err::FiducialNotFound, std::string(wave_name(which)) + "-wave " + msg),
          which_(which) {}
    Wave which() const noexcept { return which_; }

private:
    Wave which_;
};

class ClassCountError : public Error {
public:
    ClassCountError(int label, std::size_t have, std::size_t need, const std::string& msg)
        : Error(Err::InsufficientClassCount, msg), label_(label), have_(have), need_(need) {}
    int label() const noexcept { return label_; }
    std::size_t have() const noexcept { return have_; }
    std::size_t need() const noexcept { return need_; }

private:
    int label_;
    std::size_t have_, need_;
};

} // namespace bpshift
