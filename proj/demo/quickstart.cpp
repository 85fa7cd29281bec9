/*
 * Copyright 2026 The cfproto Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Explains one German Credit applicant with the jointly trained stack.
//
//   quickstart [path/to/german.csv path/to/german.schema.json]

#include <iostream>
#include <string>

#include "cfproto/cfproto.hpp"

int main(int argc, char** argv) {
  using namespace cfproto;
  const std::string csv = argc > 2 ? argv[1] : CFPROTO_SOURCE_DIR "/data/german.csv";
  const std::string schema_path = argc > 2 ? argv[2] : CFPROTO_SOURCE_DIR "/data/german.schema.json";

  const DatasetSchema schema = load_schema(schema_path);
  PreparedData p = prepare_data(load_dataset(csv, schema, true), 0.8, 7);

  Architecture arch;
  arch.encoder = {16, 8, 4};
  arch.classifier = {2};
  arch.decoder = {8, 16, 20};
  TrainConfig tc;
  tc.epochs = 100;
  tc.seed = 7;
  const ModelStack stack = train_joint(schema, p.train, arch, tc, nullptr, &p.test);
  std::cout << "test accuracy " << stack.report.test_accuracy.value_or(0.0) << "\n";

  const RecordCodec codec{p.scaler, stack.tables};
  const Matrix dense = embed_encode(p.train.features, stack.tables);
  const auto classes = class_latents(stack.encoder, dense, p.train.labels, p.split.train, 2);
  const SearchModels models = search_models(stack);

  const int high = schema.class_index("high");
  for (std::size_t row : p.split.test) {
    const Vector x0 = p.data.record(row);
    if (predicted_class(models, codec.encode(x0)) != high) continue;
    const CounterfactualResult r = find_counterfactual(x0, models, codec, classes, CfConfig{});
    std::cout << explanation_to_json(r, 0, row, "ss", schema).dump(2) << "\n";
    break;
  }
  return 0;
}
