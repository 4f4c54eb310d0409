#pragma once

#include <stdexcept>
#include <string>

namespace snbv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BehindCamera : public Error {
public:
    BehindCamera() : Error("gaussian center is behind the near plane") {}
};

class ShapeMismatch : public Error {
public:
    explicit ShapeMismatch(const std::string& what) : Error("shape mismatch: " + what) {}
};

class TooSmall : public Error {
public:
    explicit TooSmall(const std::string& what) : Error("image too small: " + what) {}
};

class NoViews : public Error {
public:
    NoViews() : Error("no training views") {}
};

class EmptyCandidates : public Error {
public:
    EmptyCandidates() : Error("candidate view set is empty") {}
};

class KindMismatch : public Error {
public:
    KindMismatch() : Error("hessian blocks have different output kinds") {}
};

class LengthMismatch : public Error {
public:
    LengthMismatch() : Error("hessian blocks / weights have different lengths") {}
};

class UnknownTarget : public Error {
public:
    explicit UnknownTarget(int target) : Error("unknown target object id " + std::to_string(target)) {}
};

class NoObjectPixels : public Error {
public:
    NoObjectPixels() : Error("ground-truth mask has no object pixels") {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format error: " + what) {}
};

} // namespace snbv
