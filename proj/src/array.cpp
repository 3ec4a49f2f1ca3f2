#include "fogseg/array.hpp"

#include <cmath>
#include <sstream>

namespace fogseg {

Shape::Shape(std::initializer_list<int> dims) {
    if (dims.size() > 4) throw ValidationError("Shape: rank > 4 not supported");
    for (int d : dims) {
        if (d < 0) throw ValidationError("Shape: negative extent");
        d_[static_cast<std::size_t>(rank_++)] = d;
    }
}

Shape::Shape(const std::vector<int>& dims) {
    if (dims.size() > 4) throw ValidationError("Shape: rank > 4 not supported");
    for (int d : dims) {
        if (d < 0) throw ValidationError("Shape: negative extent");
        d_[static_cast<std::size_t>(rank_++)] = d;
    }
}

std::int64_t Shape::numel() const {
    std::int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= d_[static_cast<std::size_t>(i)];
    return n;
}

bool Shape::operator==(const Shape& other) const {
    if (rank_ != other.rank_) return false;
    for (int i = 0; i < rank_; ++i)
        if (d_[static_cast<std::size_t>(i)] != other.d_[static_cast<std::size_t>(i)]) return false;
    return true;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (int i = 0; i < rank_; ++i) {
        if (i) os << 'x';
        os << d_[static_cast<std::size_t>(i)];
    }
    os << ']';
    return os.str();
}

DiffArray::DiffArray(Shape s, bool track)
    : shape(s), value(static_cast<std::size_t>(s.numel()), real_t{0}), tracked(track) {}

DiffArray DiffArray::leaf(Shape s, bool track) { return DiffArray(s, track); }

DiffArray DiffArray::from(Shape s, std::vector<real_t> vals, bool track) {
    if (static_cast<std::int64_t>(vals.size()) != s.numel())
        throw ValidationError("DiffArray::from: " + std::to_string(vals.size()) +
                              " values for shape " + s.str());
    DiffArray a;
    a.shape = s;
    a.value = std::move(vals);
    a.tracked = track;
    return a;
}

DiffArray DiffArray::scalar(real_t v, bool track) {
    return from(Shape{1}, {v}, track);
}

void DiffArray::ensure_grad() {
    if (tracked && grad.empty()) grad.assign(value.size(), real_t{0});
}

void DiffArray::zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), real_t{0});
}

real_t DiffArray::item() const {
    if (shape.numel() != 1)
        throw ValidationError("item(): array of shape " + shape.str() + " is not scalar");
    return value[0];
}

DiffArray* Tape::alloc(Shape s, bool tracked) {
    if (spent_)
        throw ValidationError("Tape: building ops on a consumed tape; call reset() first");
    nodes_.push_back(std::make_unique<DiffArray>(s, tracked));
    return nodes_.back().get();
}

void Tape::record(DiffArray* out, std::function<void()> step) {
    if (!recording_) return;
    steps_.push_back({out, std::move(step)});
}

void Tape::backward(DiffArray* root) {
    if (spent_)
        throw ValidationError("Tape: backward already ran; reset() and re-run the forward pass");
    if (root == nullptr || root->shape.numel() != 1)
        throw ValidationError("backward: root must be scalar, got " +
                              (root ? root->shape.str() : std::string("null")));
    if (!root->tracked)
        throw ValidationError("backward: root is untracked, nothing to differentiate");
    spent_ = true;
    root->ensure_grad();
    root->grad[0] = real_t{1};
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        // Nodes that never received a gradient contribute nothing downstream.
        if (it->out->tracked && it->out->has_grad()) it->fn();
        DiffArray* n = it->out;
        if (n != root) {
            std::vector<real_t>().swap(n->value);
            std::vector<real_t>().swap(n->grad);
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    steps_.clear();
    spent_ = false;
}

bool all_finite(const std::vector<real_t>& v) {
    for (real_t x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace fogseg
