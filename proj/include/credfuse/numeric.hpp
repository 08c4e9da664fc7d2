#pragma once

// Scalar special functions and log-space helpers shared by every module.

#include <cstddef>
#include <span>
#include <vector>

namespace credfuse {

/// log(sum(exp(x))). Returns -inf for an empty span or when every entry is -inf.
double log_sum_exp(std::span<const double> x);

/// Numerically stable softmax; output sums to 1.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

double sigmoid(double x);
/// log(1 + exp(x)) without overflow.
double softplus(double x);
/// Inverse of softplus on (0, inf).
double softplus_inverse(double y);

/// Digamma by upward recurrence to x >= 10 followed by the asymptotic
/// Bernoulli series. Requires x > 0.
double digamma(double x);

/// Natural log of the gamma function for x > 0.
double log_gamma(double x);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> x);

/// Entries finite, nonnegative and summing to one within tol.
bool on_simplex(std::span<const double> x, double tol);

}  // namespace credfuse
