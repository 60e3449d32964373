#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmsf/mat.hpp"
#include "mmsf/tape.hpp"

namespace mmsf::clinical {

enum class FieldKind { Numeric, Categorical };

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::Numeric;
};

// A fitted field descriptor. Numeric fields carry train-split z-score stats;
// categorical fields carry a frozen, sorted vocabulary. A field that had
// missing training values (or was fitted with reserve_unknown) gets an
// "unknown" bucket (categorical) or a 0/1 presence flag companion (numeric).
struct FieldDesc {
  std::string name;
  FieldKind kind = FieldKind::Numeric;
  double mean = 0.0;
  double stddev = 1.0;
  std::vector<std::string> vocab;  // categorical only
  bool has_unknown = false;        // categorical: trailing unknown slot
  bool has_presence_flag = false;  // numeric: 0/1 companion field appended

  int encoded_dim() const {
    return kind == FieldKind::Numeric ? 1 : int(vocab.size()) + (has_unknown ? 1 : 0);
  }
};

struct ClinicalSchema {
  std::vector<FieldDesc> fields;

  // Effective fields = declared fields plus one presence flag per numeric
  // field that needs one. Flags come after the field list, in field order.
  int effective_count() const;
  std::vector<int> effective_dims() const;
  bool empty() const { return fields.empty(); }
};

// One patient's encoded record: per effective field a 1 x d_k row. Numeric
// fields hold the z-scored value (0 when missing); categorical fields hold a
// one-hot row; presence flags hold raw 0/1. hot_index is -1 for non-categorical.
struct EncodedRecord {
  std::vector<num::Mat<double>> values;
  std::vector<int> hot_index;
};

// Fits per-numeric mean / population std and freezes categorical vocabularies
// on the given (training) rows. rows[i][k] is the string value of field k for
// patient i; "" means missing. reserve_unknown forces the unknown bucket and
// presence flags even when the training split has no gaps.
ClinicalSchema fit_schema(const std::vector<std::vector<std::string>>& rows,
                          const std::vector<FieldSpec>& specs, bool reserve_unknown = false);

EncodedRecord encode_record(const ClinicalSchema& schema,
                            const std::vector<std::string>& row);

// ---------------------------------------------------------------------------
// clinical data embedding (tape side)
// ---------------------------------------------------------------------------

template <class T>
struct CdeFieldVars {
  ad::Var w1, b1, w2, b2;  // encoder pair
  ad::Var w3, b3, w4, b4;  // decoder pair
};

template <class T>
struct CdeVars {
  std::vector<CdeFieldVars<T>> fields;  // one per effective field
};

// h = ReLU(c W1 + b1) W2 + b2, row-vector convention.
template <class T>
ad::Var encode_field(ad::Tape<T>& t, ad::Var c, const CdeFieldVars<T>& w) {
  ad::Var h = ad::add_rowvec(t, ad::matmul(t, c, w.w1), w.b1);
  h = ad::relu(t, h);
  return ad::add_rowvec(t, ad::matmul(t, h, w.w2), w.b2);
}

// chat = ReLU(h W3 + b3) W4 + b4.
template <class T>
ad::Var decode_field(ad::Tape<T>& t, ad::Var h, const CdeFieldVars<T>& w) {
  ad::Var d = ad::add_rowvec(t, ad::matmul(t, h, w.w3), w.b3);
  d = ad::relu(t, d);
  return ad::add_rowvec(t, ad::matmul(t, d, w.w4), w.b4);
}

template <class T>
struct CdeForward {
  ad::Var c_emb;       // 1 x d_hidden, mean of per-field hidden states
  ad::Var recon_loss;  // 1 x 1
};

// Per-field encoder/decoder pass, mean aggregation, and reconstruction loss:
// MSE for numeric fields, softmax cross-entropy (decoder output as logits)
// for categorical fields, summed over fields.
template <class T>
CdeForward<T> cde_forward(ad::Tape<T>& t, const EncodedRecord& rec, const CdeVars<T>& vars) {
  if (rec.values.empty()) throw DataError("cde_forward: record has no fields");
  if (rec.values.size() != vars.fields.size())
    throw ShapeError("cde_forward: record/weight field count mismatch");
  std::vector<std::pair<ad::Var, T>> hidden_terms, loss_terms;
  T inv_k = T(1) / T(rec.values.size());
  ad::Var emb_sum;
  for (size_t k = 0; k < rec.values.size(); ++k) {
    ad::Var c = t.leaf(rec.values[k].template cast<T>());
    ad::Var h = encode_field(t, c, vars.fields[k]);
    emb_sum = k == 0 ? h : ad::add(t, emb_sum, h);
    ad::Var chat = decode_field(t, h, vars.fields[k]);
    ad::Var term = rec.hot_index[k] >= 0
                       ? ad::softmax_xent_row(t, chat, rec.hot_index[k])
                       : ad::mse_vs_const(t, chat, rec.values[k].template cast<T>());
    loss_terms.emplace_back(term, T(1));
  }
  CdeForward<T> out;
  out.c_emb = ad::scale(t, emb_sum, inv_k);
  out.recon_loss = ad::weighted_sum(t, loss_terms);
  return out;
}

}  // namespace mmsf::clinical
