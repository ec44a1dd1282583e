// Typed client for the engine's HTTP API. The UI never re-scores or
// re-orders anything: whatever /api/search returns is what gets rendered.

export type TopicConcept = { name: string; logit: number };
export type PhraseConcept = { surface: string; logit: number };

export type QueryConcepts = {
  topics: TopicConcept[];
  phrases: PhraseConcept[];
};

export type SearchResultRow = {
  doc_id: string;
  title: string;
  score: number;
  backbone_score: number;
  topic_overlap: number;
  topics: TopicConcept[];
  phrases: PhraseConcept[];
  shared_topics: string[];
  shared_phrases: string[];
};

export type SearchResponse = {
  query: string;
  effective_query: string;
  results: SearchResultRow[];
  query_concepts: QueryConcepts;
};

export type SearchParams = {
  query: string;
  k: number;
  expand: boolean;
  retention: number;
};

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export interface SearchApi {
  search(params: SearchParams, signal?: AbortSignal): Promise<SearchResponse>;
}

export class HttpSearchApi implements SearchApi {
  constructor(private baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  async search(params: SearchParams, signal?: AbortSignal): Promise<SearchResponse> {
    const response = await fetch(`${this.baseUrl}/api/search`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        query: params.query,
        k: params.k,
        expand: params.expand,
        retention: params.retention,
      }),
      signal,
    });
    if (!response.ok) {
      throw new ApiError(response.status, `search failed with ${response.status}`);
    }
    return (await response.json()) as SearchResponse;
  }
}
