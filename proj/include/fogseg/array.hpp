#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "fogseg/errors.hpp"

namespace fogseg {

#ifdef FOGSEG_SINGLE_PRECISION
using real_t = float;
#else
using real_t = double;
#endif

// Extents of a dense row-major array. Rank 0 (scalar) through 4.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<int> dims);
    explicit Shape(const std::vector<int>& dims);

    int rank() const { return rank_; }
    int operator[](int axis) const { return d_[static_cast<std::size_t>(axis)]; }
    std::int64_t numel() const;
    bool operator==(const Shape& other) const;
    bool operator!=(const Shape& other) const { return !(*this == other); }
    std::string str() const;  // e.g. "[3x9x100]"

private:
    std::array<int, 4> d_{};
    int rank_ = 0;
};

// A dense real array with an optional same-shape gradient buffer. The grad
// buffer exists only for tracked arrays and is allocated lazily on the first
// backward contribution, so untracked data never pays for it.
struct DiffArray {
    Shape shape;
    std::vector<real_t> value;
    std::vector<real_t> grad;
    bool tracked = false;

    DiffArray() = default;
    DiffArray(Shape s, bool track);

    static DiffArray leaf(Shape s, bool track = true);
    static DiffArray from(Shape s, std::vector<real_t> vals, bool track = false);
    static DiffArray scalar(real_t v, bool track = false);

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    bool has_grad() const { return !grad.empty(); }

    // Allocates (zero-filled) grad for a tracked array; no-op otherwise.
    void ensure_grad();
    void zero_grad();

    real_t item() const;  // scalar read, validates numel == 1
};

// Records executed operations for reverse-mode replay. The tape owns every
// intermediate array of a forward pass; leaves (parameters, inputs) live
// outside it. Intermediate buffers are released as soon as their backward
// step has run, which keeps the backward peak close to the forward peak.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // New intermediate node owned by this tape.
    DiffArray* alloc(Shape s, bool tracked);

    // Registers the backward step that produced `out`. Ignored when
    // recording is off (pure inference).
    void record(DiffArray* out, std::function<void()> step);

    // Reverse replay from a scalar root. Each tracked leaf ends up with
    // d(root)/d(leaf) accumulated into its grad. One shot: a second call
    // without reset() is rejected.
    void backward(DiffArray* root);

    // Drops all nodes and steps and re-arms the tape.
    void reset();

    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }
    std::size_t num_ops() const { return steps_.size(); }

private:
    struct Step {
        DiffArray* out;
        std::function<void()> fn;
    };
    std::vector<std::unique_ptr<DiffArray>> nodes_;
    std::vector<Step> steps_;
    bool recording_ = true;
    bool spent_ = false;
};

// Grad pointer for accumulation, or nullptr when `a` is untracked.
inline real_t* grad_of(DiffArray& a) {
    if (!a.tracked) return nullptr;
    a.ensure_grad();
    return a.grad.data();
}

bool all_finite(const std::vector<real_t>& v);

}  // namespace fogseg
