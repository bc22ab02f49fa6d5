// Typed client for the read-only game API.

export interface GameSummary {
    story_id: string;
    title: string;
    synopsis: string;
}

export interface CharacterProfile {
    id: string;
    name: string;
    age?: string;
    gender?: string;
    species?: string;
    physical_appearance?: string;
    role_description?: string;
}

export interface SceneSpec {
    id: string;
    name: string;
    location?: string;
    description?: string;
}

export interface EndingSpec {
    id: string;
    label: string;
    description: string;
}

export interface GameData {
    id: string;
    title: string;
    genre: string;
    themes: string[];
    synopsis: string;
    chapter_synopses: string[];
    beginning: string;
    main_characters: CharacterProfile[];
    main_scenes: SceneSpec[];
    endings: EndingSpec[];
}

export interface NarrativeEntry {
    speaker: string;
    text: string;
    scene_id?: string | null;
    unknown_speaker?: boolean;
}

export interface ChoiceOption {
    index: number;
    text: string;
}

export type ChunkStatus =
    | "BRANCHING_WITHOUT_CHOICE"
    | "BRANCHING_WITH_CHOICE"
    | "CHAPTER_END"
    | "GAME_END";

export interface ChunkView {
    id: string;
    story_id: string;
    chapter: number;
    status: ChunkStatus;
    story_so_far: string;
    narratives: NarrativeEntry[];
    choices: ChoiceOption[];
    selected_ending_id?: string | null;
}

export interface Api {
    listGames(): Promise<GameSummary[]>;
    gameData(storyId: string): Promise<GameData>;
    start(storyId: string): Promise<ChunkView>;
    next(chunkId: string, choice?: number): Promise<ChunkView>;
    assetUrl(storyId: string, kind: "characters" | "scenes", id: string): string;
}

export class HttpApi implements Api {
    constructor(private base: string = "") {}

    private async get<T>(path: string): Promise<T> {
        const response = await fetch(this.base + path);
        if (!response.ok) {
            throw new Error(`GET ${path} failed with ${response.status}`);
        }
        return (await response.json()) as T;
    }

    listGames(): Promise<GameSummary[]> {
        return this.get("/api/games");
    }

    gameData(storyId: string): Promise<GameData> {
        return this.get(`/api/games/${encodeURIComponent(storyId)}`);
    }

    start(storyId: string): Promise<ChunkView> {
        return this.get(`/api/games/${encodeURIComponent(storyId)}/start`);
    }

    next(chunkId: string, choice?: number): Promise<ChunkView> {
        const query = choice === undefined ? "" : `?choice=${choice}`;
        return this.get(`/api/chunks/${encodeURIComponent(chunkId)}/next${query}`);
    }

    assetUrl(storyId: string, kind: "characters" | "scenes", id: string): string {
        return `${this.base}/assets/${encodeURIComponent(storyId)}/${kind}/` +
            encodeURIComponent(id);
    }
}
