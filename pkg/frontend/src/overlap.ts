// Partition two concept lists into query-only / shared / doc-only,
// preserving each side's ranking order.

export type OverlapPartition = {
  queryOnly: string[];
  shared: string[];
  docOnly: string[];
};

export function partitionConcepts(
  queryConcepts: string[],
  docConcepts: string[],
): OverlapPartition {
  const docSet = new Set(docConcepts);
  const querySet = new Set(queryConcepts);
  return {
    queryOnly: queryConcepts.filter((c) => !docSet.has(c)),
    shared: queryConcepts.filter((c) => docSet.has(c)),
    docOnly: docConcepts.filter((c) => !querySet.has(c)),
  };
}
